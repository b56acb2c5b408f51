//! JSON input files for the command-line tool.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::experiments::{
    default_range, linear_grid, wide_distributions, wide_params, RunMode, Scenario, SweepParameter,
    SweepPlan, DEFAULT_GRID_POINTS,
};
use crate::model::{
    make_distribution, DegreeDistribution, DistributionKind, ModelError, ModelParams, SocialState,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("{field}: expected {expected} values, got {got}")]
    Length {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("params and distribution are required unless a built-in scenario is named")]
    MissingParams,
    #[error("distribution needs d_max (or custom masses)")]
    MissingDegree,
    #[error("grid needs at least one point")]
    EmptyGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A scalar broadcast over all degrees, or one value per degree.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PerDegree {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerDegree {
    fn expand(&self, field: &'static str, n: usize) -> Result<Vec<f64>, ConfigError> {
        match self {
            PerDegree::Scalar(x) => Ok(vec![*x; n]),
            PerDegree::Vector(v) if v.len() == n => Ok(v.clone()),
            PerDegree::Vector(v) => Err(ConfigError::Length {
                field,
                expected: n,
                got: v.len(),
            }),
        }
    }
}

fn default_c_iu() -> f64 {
    2.0
}

fn default_c_ip() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub alpha: f64,
    #[serde(rename = "beta_P")]
    pub beta_p: PerDegree,
    #[serde(rename = "beta_U")]
    pub beta_u: PerDegree,
    pub gamma: f64,
    #[serde(rename = "L")]
    pub loss: f64,
    #[serde(rename = "c_P")]
    pub cost_protect: f64,
    #[serde(rename = "c_IU", default = "default_c_iu")]
    pub cost_infected_unprotected: f64,
    #[serde(rename = "c_IP", default = "default_c_ip")]
    pub cost_infected_protected: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl ParamsConfig {
    pub fn build(&self, d_max: usize) -> Result<ModelParams, ConfigError> {
        Ok(ModelParams {
            alpha: self.alpha,
            beta_p: self.beta_p.expand("beta_P", d_max)?,
            beta_u: self.beta_u.expand("beta_U", d_max)?,
            gamma: self.gamma,
            loss: self.loss,
            cost_protect: self.cost_protect,
            cost_infected_unprotected: self.cost_infected_unprotected,
            cost_infected_protected: self.cost_infected_protected,
            epsilon: self.epsilon,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct DistributionConfig {
    #[serde(flatten)]
    pub kind: DistributionKind,
    pub d_max: Option<usize>,
}

impl DistributionConfig {
    pub fn build(&self) -> Result<DegreeDistribution, ConfigError> {
        let d_max = match (&self.kind, self.d_max) {
            (_, Some(d)) => d,
            (DistributionKind::Custom { masses }, None) => masses.len(),
            _ => return Err(ConfigError::MissingDegree),
        };
        Ok(make_distribution(&self.kind, d_max)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub y: PerDegree,
    #[serde(rename = "z_S")]
    pub z_s: PerDegree,
    /// Defaults to `z_S`.
    #[serde(rename = "z_I")]
    pub z_i: Option<PerDegree>,
}

/// Either a built-in scenario (`"scenario": "baseline-cp10"`) or explicit
/// `params` + `distribution`. Run settings override either.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Option<String>,
    pub name: Option<String>,
    pub params: Option<ParamsConfig>,
    pub distribution: Option<DistributionConfig>,
    pub initial: Option<InitialConfig>,
    pub mode: Option<RunMode>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub record_every: Option<usize>,
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let mut s = match &self.scenario {
            Some(name) => {
                Scenario::named(name).ok_or_else(|| ConfigError::UnknownScenario(name.clone()))?
            }
            None => {
                let dist = self
                    .distribution
                    .as_ref()
                    .ok_or(ConfigError::MissingParams)?
                    .build()?;
                let params = match &self.params {
                    Some(p) => p.build(dist.d_max())?,
                    None => return Err(ConfigError::MissingParams),
                };
                Scenario::new("scenario", params, dist)
            }
        };
        let n = s.dist.d_max();
        if self.scenario.is_some() {
            if let Some(p) = &self.params {
                s.params = p.build(n)?;
            }
        }
        if let Some(init) = &self.initial {
            let z_s = init.z_s.expand("z_S", n)?;
            s.initial = SocialState {
                y: init.y.expand("y", n)?,
                z_i: match &init.z_i {
                    Some(z) => z.expand("z_I", n)?,
                    None => z_s.clone(),
                },
                z_s,
            };
        }
        if let Some(name) = &self.name {
            s.name = name.clone();
        }
        if let Some(mode) = self.mode {
            s.mode = mode;
        }
        s.step = self.step.unwrap_or(s.step);
        s.horizon = self.horizon.unwrap_or(s.horizon);
        s.record_every = self.record_every.unwrap_or(s.record_every);
        Ok(s)
    }
}

/// Explicit values, or an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    Values(Vec<f64>),
    Range {
        from: f64,
        to: f64,
        points: Option<usize>,
    },
}

impl GridConfig {
    /// `points` overrides the count of range grids; explicit lists are kept as given.
    pub fn build(&self, points: Option<usize>) -> Result<Vec<f64>, ConfigError> {
        let grid = match self {
            GridConfig::Values(v) => v.clone(),
            GridConfig::Range {
                from,
                to,
                points: p,
            } => linear_grid(*from, *to, points.or(*p).unwrap_or(DEFAULT_GRID_POINTS)),
        };
        if grid.is_empty() {
            return Err(ConfigError::EmptyGrid);
        }
        Ok(grid)
    }
}

fn default_grid(parameter: SweepParameter) -> GridConfig {
    let (from, to) = default_range(parameter);
    GridConfig::Range {
        from,
        to,
        points: None,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ScenarioConfig,
    pub parameter: SweepParameter,
    pub grid: Option<GridConfig>,
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn build(&self, points: Option<usize>) -> Result<SweepPlan, ConfigError> {
        let grid = self
            .grid
            .clone()
            .unwrap_or_else(|| default_grid(self.parameter))
            .build(points)?;
        Ok(SweepPlan {
            base: self.base.build()?,
            parameter: self.parameter,
            grid,
            output: self.output.clone(),
        })
    }
}

/// Distribution comparison: one base parameter set, several distributions,
/// and one grid per swept parameter.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub params: Option<ParamsConfig>,
    pub d_max: Option<usize>,
    pub distributions: Option<Vec<LabelledDistribution>>,
    pub alpha: Option<GridConfig>,
    #[serde(rename = "beta_P")]
    pub beta_p: Option<GridConfig>,
    #[serde(rename = "c_P")]
    pub c_p: Option<GridConfig>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LabelledDistribution {
    pub label: String,
    #[serde(flatten)]
    pub kind: DistributionKind,
}

pub struct ComparePlan {
    pub params: ModelParams,
    pub distributions: Vec<(String, DegreeDistribution)>,
    pub sweeps: Vec<(SweepParameter, Vec<f64>)>,
}

impl CompareConfig {
    pub fn build(&self, points: Option<usize>) -> Result<ComparePlan, ConfigError> {
        let d_max = self.d_max.unwrap_or(20);
        let params = match &self.params {
            Some(p) => p.build(d_max)?,
            None if d_max == 20 => wide_params(),
            None => return Err(ConfigError::MissingParams),
        };
        let kinds: Vec<(String, DistributionKind)> = match &self.distributions {
            Some(list) => list
                .iter()
                .map(|d| (d.label.clone(), d.kind.clone()))
                .collect(),
            None => wide_distributions(),
        };
        let distributions = kinds
            .into_iter()
            .map(|(label, kind)| Ok((label, make_distribution(&kind, d_max)?)))
            .collect::<Result<_, ConfigError>>()?;
        let mut sweeps = Vec::new();
        for (parameter, grid) in [
            (SweepParameter::Alpha, &self.alpha),
            (SweepParameter::BetaP, &self.beta_p),
            (SweepParameter::CostProtect, &self.c_p),
        ] {
            let grid = grid.clone().unwrap_or_else(|| default_grid(parameter));
            sweeps.push((parameter, grid.build(points)?));
        }
        Ok(ComparePlan {
            params,
            distributions,
            sweeps,
        })
    }
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> T {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn explicit_scenario() {
        let cfg: ScenarioConfig = parse(
            r#"{
                "name": "mine",
                "params": {"alpha": 0.5, "beta_P": 0.6, "beta_U": [0.7, 0.7, 0.7, 0.7],
                           "gamma": 0.3, "L": 20, "c_P": 10},
                "distribution": {"kind": "uniform", "d_max": 4},
                "initial": {"y": 0.1, "z_S": 0.5},
                "mode": "switched",
                "horizon": 100
            }"#,
        );
        let s = cfg.build().unwrap();
        assert_eq!(s.name, "mine");
        assert_eq!(s.params.beta_p, vec![0.6; 4]);
        assert_eq!(s.params.cost_infected_unprotected, 2.0);
        assert_eq!(s.initial.z_i, vec![0.5; 4]);
        assert_eq!(s.mode, RunMode::Switched);
        assert_eq!(s.horizon, 100.0);
        assert_eq!(s, {
            let mut t = Scenario::named("baseline-cp10")
                .unwrap()
                .with_mode(RunMode::Switched);
            t.name = "mine".into();
            t.horizon = 100.0;
            t
        });
    }

    #[test]
    fn preset_with_overrides() {
        let cfg: ScenarioConfig =
            parse(r#"{"scenario": "baseline-cp8", "mode": "equilibrium-only"}"#);
        let s = cfg.build().unwrap();
        assert_eq!(s.params.cost_protect, 8.0);
        assert_eq!(s.mode, RunMode::Equilibrium);
    }

    #[test]
    fn config_errors() {
        let bad: Result<ScenarioConfig, _> =
            serde_json::from_str(r#"{"scenario": "x", "bogus": 1}"#);
        assert!(bad.is_err());
        let cfg: ScenarioConfig = parse(r#"{"scenario": "nope"}"#);
        assert!(matches!(cfg.build(), Err(ConfigError::UnknownScenario(_))));
        let cfg: ScenarioConfig = parse(
            r#"{"params": {"alpha": 0.5, "beta_P": [0.6, 0.6], "beta_U": 0.7, "gamma": 0.3, "L": 20, "c_P": 10},
                "distribution": {"kind": "uniform", "d_max": 4}}"#,
        );
        assert!(matches!(
            cfg.build(),
            Err(ConfigError::Length {
                field: "beta_P",
                ..
            })
        ));
        let cfg: ScenarioConfig = parse(
            r#"{"scenario": "baseline-cp8", "distribution": {"kind": "binomial", "n": 20, "p": 0.5}}"#,
        );
        assert!(cfg.distribution.unwrap().build().is_err());
    }

    #[test]
    fn custom_masses_imply_degree() {
        let d: DistributionConfig = parse(r#"{"kind": "custom", "masses": [1, 1, 2]}"#);
        let dist = d.build().unwrap();
        assert_eq!(dist.d_max(), 3);
        assert!((dist.mass(3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grids() {
        let g: GridConfig = parse(r#"{"from": 0, "to": 1, "points": 3}"#);
        assert_eq!(g.build(None).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(g.build(Some(5)).unwrap().len(), 5);
        let g: GridConfig = parse("[0.1, 0.2]");
        assert_eq!(g.build(Some(5)).unwrap(), vec![0.1, 0.2]);
        let g: GridConfig = parse("[]");
        assert!(g.build(None).is_err());
    }

    #[test]
    fn sweep_defaults() {
        let cfg: SweepConfig =
            parse(r#"{"base": {"scenario": "hetero-case1"}, "parameter": "m_4"}"#);
        let plan = cfg.build(None).unwrap();
        assert_eq!(plan.grid.len(), DEFAULT_GRID_POINTS);
        assert_eq!(plan.grid[0], 0.05);
    }

    #[test]
    fn compare_defaults() {
        let plan = CompareConfig::default().build(Some(5)).unwrap();
        assert_eq!(plan.distributions.len(), 3);
        assert_eq!(plan.sweeps.len(), 3);
        assert!(plan.sweeps.iter().all(|(_, g)| g.len() == 5));
    }
}

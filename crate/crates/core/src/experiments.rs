//! Scenario runner, parameter sweeps and distribution comparisons.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{integrate_coupled, DynamicsError, Integration, Trajectory, DEFAULT_STEP};
use crate::equilibrium::{find_equilibrium, EquilibriumError, EquilibriumResult, Regime};
use crate::model::{
    baseline_distribution, baseline_params, make_distribution, validate, DegreeDistribution,
    DistributionKind, ModelError, ModelParams, SocialState,
};
use crate::output::{csv_writer, fmt_sig};
use crate::reduced::integrate_switched;

/// Simulated limit and analytic equilibrium agree when Θ differs by less than this.
pub const THETA_AGREEMENT: f64 = 1e-3;
/// Per-degree counterpart of [`THETA_AGREEMENT`].
pub const Y_AGREEMENT: f64 = 5e-3;
pub const DEFAULT_GRID_POINTS: usize = 33;
pub const DEFAULT_HORIZON: f64 = 2000.0;
pub const DEFAULT_RECORD_EVERY: usize = 100;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{name}: invalid parameters: {report}")]
    Invalid { name: String, report: String },
    #[error("{name}: {source}")]
    Dynamics {
        name: String,
        #[source]
        source: DynamicsError,
    },
    #[error("{name}: {source}")]
    Equilibrium {
        name: String,
        #[source]
        source: EquilibriumError,
    },
    #[error("sweep grid must be strictly increasing and finite")]
    BadGrid,
    #[error("{parameter} sweep needs d_max = {expected}, got {got}")]
    SweepShape {
        parameter: SweepParameter,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    /// Failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ExperimentError::Dynamics {
                source: DynamicsError::NonFinite { .. },
                ..
            } | ExperimentError::Equilibrium { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Coupled,
    Switched,
    #[serde(alias = "equilibrium-only")]
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: ModelParams,
    pub dist: DegreeDistribution,
    pub initial: SocialState,
    pub mode: RunMode,
    pub step: f64,
    pub horizon: f64,
    pub record_every: usize,
}

pub const SCENARIO_NAMES: &[&str] = &[
    "baseline-cp10",
    "baseline-cp8",
    "baseline-dfe",
    "hetero-case1",
    "hetero-case2",
    "wide-uniform",
    "wide-binomial",
    "wide-bimodal",
];

impl Scenario {
    pub fn new(name: &str, params: ModelParams, dist: DegreeDistribution) -> Self {
        let n = dist.d_max();
        Self {
            name: name.to_string(),
            params,
            dist,
            initial: SocialState::uniform(n, 0.1, 0.5, 0.5),
            mode: RunMode::Coupled,
            step: DEFAULT_STEP,
            horizon: DEFAULT_HORIZON,
            record_every: DEFAULT_RECORD_EVERY,
        }
    }

    /// Built-in scenarios; see [`SCENARIO_NAMES`].
    pub fn named(name: &str) -> Option<Self> {
        let s = match name {
            "baseline-cp10" => Self::new(name, baseline_params(10.0), baseline_distribution()),
            "baseline-cp8" => Self::new(name, baseline_params(8.0), baseline_distribution()),
            "baseline-dfe" => Self::new(
                name,
                baseline_params(10.0).with_beta_p(0.01),
                baseline_distribution(),
            ),
            "hetero-case1" => Self::new(
                name,
                hetero_params(HeterogeneousRates::Case1),
                hetero_distribution(0.45).ok()?,
            ),
            "hetero-case2" => Self::new(
                name,
                hetero_params(HeterogeneousRates::Case2),
                hetero_distribution(0.45).ok()?,
            ),
            "wide-uniform" | "wide-binomial" | "wide-bimodal" => {
                let (_, kind) = wide_distributions()
                    .into_iter()
                    .find(|(label, _)| name.ends_with(label.as_str()))?;
                Self::new(name, wide_params(), make_distribution(&kind, 20).ok()?)
            }
            _ => return None,
        };
        Some(s)
    }

    pub fn with_mode(mut self, mode: RunMode) -> Self {
        self.mode = mode;
        self
    }

    fn integration(&self) -> Integration {
        Integration::new(self.step, self.horizon).record_every(self.record_every)
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        let mut report = validate(&self.params, &self.dist);
        if !self.initial.is_valid(self.dist.d_max()) {
            report.violations.push(crate::model::Violation::OutOfRange {
                name: "initial state",
                value: f64::NAN,
                range: "[0,1] per component, one entry per degree",
            });
        }
        if report.is_ok() {
            Ok(())
        } else {
            Err(ExperimentError::Invalid {
                name: self.name.clone(),
                report: report.to_string(),
            })
        }
    }
}

/// Infection-rate layouts of the heterogeneous-rate study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeterogeneousRates {
    /// 0.1 for degrees 1 and 2, 0.6 for degrees 3 and 4.
    Case1,
    /// The reverse assignment.
    Case2,
}

pub fn hetero_params(rates: HeterogeneousRates) -> ModelParams {
    let mut p = ModelParams::uniform(4, 0.5, 0.1, 0.6, 0.2, 15.0, 15.0, 2.0, 1.0);
    p.beta_p = match rates {
        HeterogeneousRates::Case1 => vec![0.1, 0.1, 0.6, 0.6],
        HeterogeneousRates::Case2 => vec![0.6, 0.6, 0.1, 0.1],
    };
    p
}

/// `m_2 = m_3 = 0.05`, `m_1 = 1 - m_2 - m_3 - m_4`.
pub fn hetero_distribution(m4: f64) -> Result<DegreeDistribution, ModelError> {
    let m1 = 1.0 - 0.1 - m4;
    if m1 < 0.0 || m4 < 0.0 {
        return Err(ModelError::NegativeMass {
            degree: if m4 < 0.0 { 4 } else { 1 },
            mass: m1.min(m4),
        });
    }
    DegreeDistribution::from_masses(vec![m1, 0.05, 0.05, m4])
}

/// Base parameters of the distribution comparison over degrees `1..=20`.
/// Only `β_U`, `γ` and `L` are fixed by the experiment; `α`, `β_P` and `c_P`
/// are the swept quantities and default to 0.5, 0.3 and 5.
pub fn wide_params() -> ModelParams {
    ModelParams::uniform(20, 0.5, 0.3, 0.9, 0.4, 10.0, 5.0, 2.0, 1.0)
}

/// Binomial, uniform and bimodal, each with average degree 10.5.
pub fn wide_distributions() -> Vec<(String, DistributionKind)> {
    vec![
        (
            "binomial".into(),
            DistributionKind::Binomial { n: 20, p: 0.525 },
        ),
        ("uniform".into(), DistributionKind::Uniform),
        ("bimodal".into(), DistributionKind::Bimodal),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub mode: RunMode,
    pub final_theta: f64,
    pub final_y_avg: f64,
    pub converged_at: Option<f64>,
    pub regime: Regime,
    pub theta_star: f64,
    pub d_eq: Option<usize>,
    pub y_avg_star: f64,
    /// `|Θ(T) - Θ*|`; zero in equilibrium-only mode.
    pub theta_gap: f64,
    /// `max_d |y_d(T) - y*_d|`.
    pub y_gap: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone)]
pub struct ArtifactBundle {
    pub trajectory: Option<Trajectory>,
    pub equilibrium: EquilibriumResult,
    pub summary: ScenarioSummary,
}

impl ArtifactBundle {
    /// Writes `trajectory.csv` (if any), `equilibrium.json` and `summary.json`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if let Some(traj) = &self.trajectory {
            let path = dir.join("trajectory.csv");
            traj.write_csv(fs::File::create(&path)?).map_err(|source| {
                ExperimentError::Dynamics {
                    name: self.summary.name.clone(),
                    source,
                }
            })?;
            written.push(path);
        }
        for (file, value) in [
            ("equilibrium.json", serde_json::to_value(&self.equilibrium)?),
            ("summary.json", serde_json::to_value(&self.summary)?),
        ] {
            let path = dir.join(file);
            let mut f = fs::File::create(&path)?;
            serde_json::to_writer_pretty(&mut f, &value)?;
            writeln!(f)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<ArtifactBundle, ExperimentError> {
    scenario.check()?;
    let name = || scenario.name.clone();
    let eq = find_equilibrium(&scenario.params, &scenario.dist).map_err(|source| {
        ExperimentError::Equilibrium {
            name: name(),
            source,
        }
    })?;
    let wrap = |source| ExperimentError::Dynamics {
        name: name(),
        source,
    };
    let (p, dist) = (&scenario.params, &scenario.dist);
    let trajectory = match scenario.mode {
        RunMode::Coupled => Some(
            integrate_coupled(&scenario.initial, p, dist, &scenario.integration()).map_err(wrap)?,
        ),
        RunMode::Switched => Some(
            integrate_switched(&scenario.initial.y, p, dist, &scenario.integration())
                .map_err(wrap)?,
        ),
        RunMode::Equilibrium => None,
    };
    let y_avg_star = eq.y_avg(dist);
    let (final_theta, final_y_avg, converged_at, y_gap) = match &trajectory {
        Some(t) => {
            let last = t.last_state().expect("trajectory keeps its initial state");
            let gap = last
                .y
                .iter()
                .zip(&eq.y_star)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (
                t.final_theta().unwrap_or(f64::NAN),
                t.final_y_avg().unwrap_or(f64::NAN),
                t.converged_at,
                gap,
            )
        }
        None => (eq.theta_star, y_avg_star, None, 0.0),
    };
    let theta_gap = (final_theta - eq.theta_star).abs();
    let summary = ScenarioSummary {
        name: name(),
        mode: scenario.mode,
        final_theta,
        final_y_avg,
        converged_at,
        regime: eq.regime,
        theta_star: eq.theta_star,
        d_eq: eq.d_eq,
        y_avg_star,
        theta_gap,
        y_gap,
        agrees: theta_gap < THETA_AGREEMENT && y_gap < Y_AGREEMENT,
    };
    Ok(ArtifactBundle {
        trajectory,
        equilibrium: eq,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "alpha")]
    Alpha,
    /// Applied uniformly to every degree.
    #[serde(rename = "beta_P")]
    BetaP,
    #[serde(rename = "c_P")]
    CostProtect,
    /// Mass of degree 4 in the four-degree layout of [`hetero_distribution`].
    #[serde(rename = "m_4")]
    M4,
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::BetaP => "beta_P",
            SweepParameter::CostProtect => "c_P",
            SweepParameter::M4 => "m_4",
        })
    }
}

/// `points` evenly spaced values from `from` to `to` inclusive.
pub fn linear_grid(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![from],
        _ => (0..points)
            .map(|i| from + (to - from) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Default sweep range for each parameter.
pub fn default_range(parameter: SweepParameter) -> (f64, f64) {
    match parameter {
        SweepParameter::Alpha => (0.05, 0.95),
        SweepParameter::BetaP => (0.05, 0.95),
        SweepParameter::CostProtect => (0.01, 20.0),
        SweepParameter::M4 => (0.05, 0.85),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub base: Scenario,
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub output: Option<PathBuf>,
}

impl SweepPlan {
    pub fn check(&self) -> Result<(), ExperimentError> {
        let increasing = self.grid.windows(2).all(|w| w[0] < w[1]);
        if !increasing || self.grid.iter().any(|v| !v.is_finite()) {
            return Err(ExperimentError::BadGrid);
        }
        if self.parameter == SweepParameter::M4 && self.base.dist.d_max() != 4 {
            return Err(ExperimentError::SweepShape {
                parameter: self.parameter,
                expected: 4,
                got: self.base.dist.d_max(),
            });
        }
        Ok(())
    }

    /// Parameters and distribution at one grid value.
    pub fn point(&self, value: f64) -> Result<(ModelParams, DegreeDistribution), String> {
        let mut params = self.base.params.clone();
        let mut dist = self.base.dist.clone();
        match self.parameter {
            SweepParameter::Alpha => params.alpha = value,
            SweepParameter::BetaP => params = params.with_beta_p(value),
            SweepParameter::CostProtect => params.cost_protect = value,
            SweepParameter::M4 => dist = hetero_distribution(value).map_err(|e| e.to_string())?,
        }
        let report = validate(&params, &dist);
        if report.is_ok() {
            Ok((params, dist))
        } else {
            Err(report.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub y_avg: Option<f64>,
    pub theta_star: Option<f64>,
    pub regime: Option<Regime>,
    pub d_eq: Option<usize>,
    /// Why the point was skipped.
    pub flag: Option<String>,
}

impl SweepRow {
    fn evaluate(
        index: usize,
        value: f64,
        point: Result<(ModelParams, DegreeDistribution), String>,
    ) -> Self {
        let mut row = SweepRow {
            index,
            value,
            y_avg: None,
            theta_star: None,
            regime: None,
            d_eq: None,
            flag: None,
        };
        match point.and_then(|(p, dist)| {
            find_equilibrium(&p, &dist)
                .map(|eq| (eq, dist))
                .map_err(|e| e.to_string())
        }) {
            Ok((eq, dist)) => {
                row.y_avg = Some(eq.y_avg(&dist));
                row.theta_star = Some(eq.theta_star);
                row.regime = Some(eq.regime);
                row.d_eq = eq.d_eq;
            }
            Err(msg) => row.flag = Some(msg),
        }
        row
    }
}

/// Equilibrium at every grid value, evaluated in parallel; rows come back in grid order.
pub fn run_sweep(plan: &SweepPlan) -> Result<Vec<SweepRow>, ExperimentError> {
    plan.check()?;
    Ok(plan
        .grid
        .par_iter()
        .enumerate()
        .map(|(i, &v)| SweepRow::evaluate(i, v, plan.point(v)))
        .collect())
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(
    parameter: SweepParameter,
    rows: &[SweepRow],
    w: W,
) -> Result<(), ExperimentError> {
    let mut wtr = csv_writer(w);
    wtr.write_record([
        parameter.to_string().as_str(),
        "y_avg",
        "theta_star",
        "regime",
        "d_eq",
        "flag",
    ])?;
    for r in rows {
        wtr.write_record([
            fmt_sig(r.value),
            opt_num(r.y_avg),
            opt_num(r.theta_star),
            r.regime.map(|g| g.to_string()).unwrap_or_default(),
            r.d_eq.map(|d| d.to_string()).unwrap_or_default(),
            r.flag.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpotCheck {
    pub index: usize,
    pub theta_star: f64,
    pub theta_simulated: f64,
    pub gap: f64,
}

/// Re-derives selected sweep rows by integrating the switched system from the
/// base scenario's initial infection levels.
pub fn spot_check(
    plan: &SweepPlan,
    rows: &[SweepRow],
    indices: &[usize],
    horizon: f64,
) -> Result<Vec<SpotCheck>, ExperimentError> {
    let opts = Integration::new(plan.base.step, horizon).record_every(usize::MAX);
    indices
        .iter()
        .filter_map(|&i| {
            let row = rows.get(i)?;
            let theta_star = row.theta_star?;
            let (p, dist) = plan.point(row.value).ok()?;
            Some((i, theta_star, p, dist))
        })
        .map(|(index, theta_star, p, dist)| {
            let traj =
                integrate_switched(&plan.base.initial.y, &p, &dist, &opts).map_err(|source| {
                    ExperimentError::Dynamics {
                        name: format!("{} spot check {index}", plan.base.name),
                        source,
                    }
                })?;
            let theta_simulated = traj.final_theta().unwrap_or(f64::NAN);
            Ok(SpotCheck {
                index,
                theta_star,
                theta_simulated,
                gap: (theta_simulated - theta_star).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub distribution: String,
    pub row: SweepRow,
}

/// Sweeps `parameter` over `grid` once per distribution, all from `base`.
pub fn compare_distributions(
    base: &ModelParams,
    distributions: &[(String, DegreeDistribution)],
    parameter: SweepParameter,
    grid: &[f64],
) -> Result<Vec<Vec<ComparisonRow>>, ExperimentError> {
    distributions
        .iter()
        .map(|(label, dist)| {
            let plan = SweepPlan {
                base: Scenario::new(label, base.clone(), dist.clone())
                    .with_mode(RunMode::Equilibrium),
                parameter,
                grid: grid.to_vec(),
                output: None,
            };
            Ok(run_sweep(&plan)?
                .into_iter()
                .map(|row| ComparisonRow {
                    distribution: label.clone(),
                    row,
                })
                .collect())
        })
        .collect()
}

pub fn write_comparison_csv<W: Write>(
    parameter: SweepParameter,
    rows: &[ComparisonRow],
    w: W,
) -> Result<(), ExperimentError> {
    let mut wtr = csv_writer(w);
    wtr.write_record([
        "distribution",
        parameter.to_string().as_str(),
        "y_avg",
        "theta",
        "regime",
    ])?;
    for r in rows {
        wtr.write_record([
            r.distribution.clone(),
            fmt_sig(r.row.value),
            opt_num(r.row.y_avg),
            opt_num(r.row.theta_star),
            r.row.regime.map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

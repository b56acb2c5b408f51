//! Parameter and degree-distribution containers.
//!
//! Degrees are always the contiguous set `1..=d_max`; per-degree vectors are
//! indexed by `d - 1`.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};
use thiserror::Error;

/// Tolerance on the mass sum accepted by [`validate`].
pub const MASS_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("d_max must be at least {min}, got {d_max}")]
    DegreeTooSmall { d_max: usize, min: usize },
    #[error("binomial success probability must lie in (0,1), got {0}")]
    BinomialProbability(f64),
    #[error("binomial support 1..={d_max} carries no mass for n = {n}")]
    EmptyBinomialSupport { n: u64, d_max: usize },
    #[error("degree mass for d = {degree} is negative ({mass})")]
    NegativeMass { degree: usize, mass: f64 },
    #[error("degree masses must have a positive, finite sum (got {0})")]
    DegenerateMasses(f64),
    #[error("vector length {got} does not match the {expected} degree classes")]
    LengthMismatch { got: usize, expected: usize },
}

/// Scalar game and epidemic parameters.
///
/// Field names on the wire follow the conventional symbols (`beta_P`, `L`,
/// `c_IU`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Infection-probability multiplier for protected susceptibles.
    pub alpha: f64,
    /// Per-degree transmission probability of a protected infected node.
    #[serde(rename = "beta_P")]
    pub beta_p: Vec<f64>,
    /// Per-degree transmission probability of an unprotected infected node.
    #[serde(rename = "beta_U")]
    pub beta_u: Vec<f64>,
    pub gamma: f64,
    /// Loss upon infection.
    #[serde(rename = "L")]
    pub loss: f64,
    /// Cost of adopting protection.
    #[serde(rename = "c_P")]
    pub cost_protect: f64,
    /// Penalty for an infected agent that stays unprotected.
    #[serde(rename = "c_IU")]
    pub cost_infected_unprotected: f64,
    /// Inconvenience for an infected agent that protects.
    #[serde(rename = "c_IP")]
    pub cost_infected_protected: f64,
    /// Timescale separation between strategy revision and the epidemic.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1.0
}

impl ModelParams {
    /// Homogeneous transmission rates over `d_max` degree classes.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        d_max: usize,
        alpha: f64,
        beta_p: f64,
        beta_u: f64,
        gamma: f64,
        loss: f64,
        cost_protect: f64,
        cost_infected_unprotected: f64,
        cost_infected_protected: f64,
    ) -> Self {
        Self {
            alpha,
            beta_p: vec![beta_p; d_max],
            beta_u: vec![beta_u; d_max],
            gamma,
            loss,
            cost_protect,
            cost_infected_unprotected,
            cost_infected_protected,
            epsilon: 1.0,
        }
    }

    pub fn d_max(&self) -> usize {
        self.beta_p.len()
    }

    pub fn with_cost_protect(mut self, cost: f64) -> Self {
        self.cost_protect = cost;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_beta_p(mut self, beta: f64) -> Self {
        self.beta_p.iter_mut().for_each(|b| *b = beta);
        self
    }
}

/// A degree distribution over `1..=d_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeDistribution {
    masses: Vec<f64>,
    avg_degree: f64,
    strictly_positive: bool,
    /// `d * m_d / d_avg`, the probability that a random neighbour has degree d.
    #[serde(skip)]
    neighbor: Vec<f64>,
}

impl DegreeDistribution {
    /// Normalizes arbitrary non-negative weights into a distribution.
    pub fn from_masses(weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::DegreeTooSmall { d_max: 0, min: 1 });
        }
        for (i, &w) in weights.iter().enumerate() {
            if w < 0.0 || !w.is_finite() {
                return Err(ModelError::NegativeMass {
                    degree: i + 1,
                    mass: w,
                });
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(ModelError::DegenerateMasses(total));
        }
        let masses: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self::from_normalized(masses))
    }

    fn from_normalized(masses: Vec<f64>) -> Self {
        let avg_degree: f64 = masses
            .iter()
            .enumerate()
            .map(|(i, m)| (i + 1) as f64 * m)
            .sum();
        let strictly_positive = masses.iter().all(|&m| m > 0.0);
        let neighbor = masses
            .iter()
            .enumerate()
            .map(|(i, m)| (i + 1) as f64 * m / avg_degree)
            .collect();
        Self {
            masses,
            avg_degree,
            strictly_positive,
            neighbor,
        }
    }

    pub fn d_max(&self) -> usize {
        self.masses.len()
    }

    pub fn degrees(&self) -> impl Iterator<Item = usize> {
        1..=self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Mass of degree `d` (1-based).
    pub fn mass(&self, d: usize) -> f64 {
        self.masses[d - 1]
    }

    pub fn avg_degree(&self) -> f64 {
        self.avg_degree
    }

    /// Whether every degree class carries positive mass.
    pub fn strictly_positive(&self) -> bool {
        self.strictly_positive
    }

    /// Neighbour-degree weights `d * m_d / d_avg`, indexed by `d - 1`.
    pub fn neighbor_weights(&self) -> &[f64] {
        &self.neighbor
    }

    pub fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len == self.d_max() {
            Ok(())
        } else {
            Err(ModelError::LengthMismatch {
                got: len,
                expected: self.d_max(),
            })
        }
    }
}

impl<'de> Deserialize<'de> for DegreeDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            masses: Vec<f64>,
        }
        let raw = Raw::deserialize(de)?;
        DegreeDistribution::from_masses(raw.masses).map_err(serde::de::Error::custom)
    }
}

/// Distribution families used in the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistributionKind {
    Uniform,
    Binomial {
        n: u64,
        p: f64,
    },
    /// Equal mass on `{1, 2, d_max - 1, d_max}`.
    Bimodal,
    Custom {
        masses: Vec<f64>,
    },
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionKind::Uniform => write!(f, "uniform"),
            DistributionKind::Binomial { .. } => write!(f, "binomial"),
            DistributionKind::Bimodal => write!(f, "bimodal"),
            DistributionKind::Custom { .. } => write!(f, "custom"),
        }
    }
}

pub fn make_distribution(
    kind: &DistributionKind,
    d_max: usize,
) -> Result<DegreeDistribution, ModelError> {
    if d_max == 0 {
        return Err(ModelError::DegreeTooSmall { d_max, min: 1 });
    }
    match kind {
        DistributionKind::Uniform => DegreeDistribution::from_masses(vec![1.0; d_max]),
        DistributionKind::Binomial { n, p } => {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(ModelError::BinomialProbability(*p));
            }
            let pmf = Binomial::new(*p, *n).map_err(|_| ModelError::BinomialProbability(*p))?;
            // d = 0 is not a degree class; the support is renormalized over 1..=d_max.
            let weights: Vec<f64> = (1..=d_max as u64).map(|d| pmf.pmf(d)).collect();
            if weights.iter().all(|&w| w == 0.0) {
                return Err(ModelError::EmptyBinomialSupport { n: *n, d_max });
            }
            DegreeDistribution::from_masses(weights)
        }
        DistributionKind::Bimodal => {
            if d_max < 2 {
                return Err(ModelError::DegreeTooSmall { d_max, min: 2 });
            }
            let mut weights = vec![0.0; d_max];
            for d in [1, 2, d_max - 1, d_max] {
                weights[d - 1] += 0.25;
            }
            DegreeDistribution::from_masses(weights)
        }
        DistributionKind::Custom { masses } => {
            if masses.len() != d_max {
                return Err(ModelError::LengthMismatch {
                    got: masses.len(),
                    expected: d_max,
                });
            }
            DegreeDistribution::from_masses(masses.clone())
        }
    }
}

/// Per-degree epidemic and strategy state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialState {
    /// Infected fraction per degree.
    pub y: Vec<f64>,
    /// Unprotected fraction among susceptibles.
    pub z_s: Vec<f64>,
    /// Unprotected fraction among infected.
    pub z_i: Vec<f64>,
}

impl SocialState {
    pub fn uniform(d_max: usize, y: f64, z_s: f64, z_i: f64) -> Self {
        Self {
            y: vec![y; d_max],
            z_s: vec![z_s; d_max],
            z_i: vec![z_i; d_max],
        }
    }

    pub fn d_max(&self) -> usize {
        self.y.len()
    }

    /// True when all three vectors have `d_max` entries in `[0,1]`.
    pub fn is_valid(&self, d_max: usize) -> bool {
        [&self.y, &self.z_s, &self.z_i]
            .iter()
            .all(|v| v.len() == d_max && v.iter().all(|x| (0.0..=1.0).contains(x)))
    }

    pub(crate) fn components(&self) -> impl Iterator<Item = &f64> {
        self.y.iter().chain(&self.z_s).chain(&self.z_i)
    }
}

/// `sum_d m_d y^d`.
pub fn average_infection(y: &[f64], dist: &DegreeDistribution) -> Result<f64, ModelError> {
    dist.check_len(y.len())?;
    Ok(dist.masses().iter().zip(y).map(|(m, y)| m * y).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    CostOrdering {
        c_iu: f64,
        c_ip: f64,
    },
    LengthMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    MassSum(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange { name, value, range } => {
                write!(f, "{name} = {value} outside {range}")
            }
            Violation::CostOrdering { c_iu, c_ip } => {
                write!(f, "c_IU > c_IP required (c_IU = {c_iu}, c_IP = {c_ip})")
            }
            Violation::LengthMismatch {
                name,
                got,
                expected,
            } => write!(f, "{name} has {got} entries, expected {expected}"),
            Violation::MassSum(s) => write!(f, "degree masses sum to {s}, expected 1"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Degrees carrying zero mass. Allowed, but the rank-one graph built over
    /// them is no longer strongly connected.
    pub zero_mass_degrees: Vec<usize>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.zero_mass_degrees
            .iter()
            .map(|d| format!("degree {d} has zero mass"))
            .collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Checks the standing assumptions on parameters and distribution. Never fails;
/// every problem found is listed in the report.
pub fn validate(params: &ModelParams, dist: &DegreeDistribution) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut range = |name: &'static str, value: f64, ok: bool, range: &'static str| {
        if !ok {
            report
                .violations
                .push(Violation::OutOfRange { name, value, range });
        }
    };
    range("alpha", params.alpha, open_unit(params.alpha), "(0,1)");
    range("gamma", params.gamma, open_unit(params.gamma), "(0,1)");
    range("L", params.loss, params.loss > 0.0, "(0,inf)");
    range(
        "c_P",
        params.cost_protect,
        params.cost_protect > 0.0,
        "(0,inf)",
    );
    range(
        "c_IU",
        params.cost_infected_unprotected,
        params.cost_infected_unprotected > 0.0,
        "(0,inf)",
    );
    range(
        "c_IP",
        params.cost_infected_protected,
        params.cost_infected_protected > 0.0,
        "(0,inf)",
    );
    range(
        "epsilon",
        params.epsilon,
        params.epsilon > 0.0 && params.epsilon <= 1.0,
        "(0,1]",
    );
    for &b in &params.beta_p {
        range("beta_P", b, open_unit(b), "(0,1)");
    }
    for &b in &params.beta_u {
        range("beta_U", b, open_unit(b), "(0,1)");
    }
    if params.cost_infected_unprotected <= params.cost_infected_protected {
        report.violations.push(Violation::CostOrdering {
            c_iu: params.cost_infected_unprotected,
            c_ip: params.cost_infected_protected,
        });
    }
    for (name, v) in [("beta_P", &params.beta_p), ("beta_U", &params.beta_u)] {
        if v.len() != dist.d_max() {
            report.violations.push(Violation::LengthMismatch {
                name,
                got: v.len(),
                expected: dist.d_max(),
            });
        }
    }
    let sum: f64 = dist.masses().iter().sum();
    if (sum - 1.0).abs() > MASS_SUM_TOLERANCE {
        report.violations.push(Violation::MassSum(sum));
    }
    report.zero_mass_degrees = dist
        .masses()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0.0)
        .map(|(i, _)| i + 1)
        .collect();
    report
}

/// Baseline setting: four equally likely degrees, homogeneous rates.
///
/// The infected-agent costs only matter through `c_IU > c_IP`; any such pair
/// gives the same limit, `(2, 1)` is used throughout.
pub fn baseline_params(cost_protect: f64) -> ModelParams {
    ModelParams::uniform(4, 0.5, 0.6, 0.7, 0.3, 20.0, cost_protect, 2.0, 1.0)
}

pub fn baseline_distribution() -> DegreeDistribution {
    DegreeDistribution::from_masses(vec![0.25; 4]).expect("valid masses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_is_valid() {
        let report = validate(&baseline_params(10.0), &baseline_distribution());
        assert!(report.is_ok(), "{report}");
        assert!(report.zero_mass_degrees.is_empty());
    }

    #[test]
    fn gamma_out_of_range() {
        let mut p = baseline_params(10.0);
        p.gamma = 1.5;
        let report = validate(&p, &baseline_distribution());
        assert_eq!(
            report.violations,
            vec![Violation::OutOfRange {
                name: "gamma",
                value: 1.5,
                range: "(0,1)"
            }]
        );
    }

    #[test]
    fn reversed_infected_costs() {
        let mut p = baseline_params(10.0);
        p.cost_infected_unprotected = 1.0;
        p.cost_infected_protected = 2.0;
        let report = validate(&p, &baseline_distribution());
        assert_eq!(report.violations.len(), 1);
        assert!(report.to_string().contains("c_IU > c_IP required"));
    }

    #[test]
    fn zero_mass_is_a_warning() {
        let dist = DegreeDistribution::from_masses(vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        assert!(!dist.strictly_positive());
        let report = validate(&baseline_params(10.0), &dist);
        assert!(report.is_ok());
        assert_eq!(report.zero_mass_degrees, vec![2, 4]);
    }

    #[test]
    fn length_mismatch_reported() {
        let dist = DegreeDistribution::from_masses(vec![1.0; 3]).unwrap();
        let report = validate(&baseline_params(10.0), &dist);
        assert_eq!(report.violations.len(), 2);
    }

    #[test]
    fn uniform_and_bimodal() {
        let u = make_distribution(&DistributionKind::Uniform, 20).unwrap();
        assert!(u.masses().iter().all(|&m| (m - 0.05).abs() < 1e-15));
        assert!((u.avg_degree() - 10.5).abs() < 1e-12);

        let b = make_distribution(&DistributionKind::Bimodal, 20).unwrap();
        for d in 1..=20 {
            let expected = if [1, 2, 19, 20].contains(&d) {
                0.25
            } else {
                0.0
            };
            assert_eq!(b.mass(d), expected);
        }
        assert!((b.avg_degree() - 10.5).abs() < 1e-12);
    }

    #[test]
    fn binomial_renormalized_average() {
        // Oracle: sum the pmf by hand over 1..=20 and renormalize.
        let (n, p) = (20u64, 0.525f64);
        let mut pmf = [0.0; 21];
        let mut c = 1.0f64;
        for k in 0..=n {
            if k > 0 {
                c = c * (n - k + 1) as f64 / k as f64;
            }
            pmf[k as usize] = c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
        }
        let tail: f64 = pmf[1..].iter().sum();
        let oracle_avg: f64 = (1..=20).map(|d| d as f64 * pmf[d] / tail).sum();

        let dist = make_distribution(&DistributionKind::Binomial { n, p }, 20).unwrap();
        assert!((dist.avg_degree() - oracle_avg).abs() < 1e-12);
        assert!((dist.avg_degree() - 10.5).abs() < 1e-4);
        assert!((pmf[0] - 3.5e-7).abs() < 1e-7);
    }

    #[test]
    fn custom_rejects_bad_masses() {
        assert!(matches!(
            make_distribution(
                &DistributionKind::Custom {
                    masses: vec![0.5, -0.1]
                },
                2
            ),
            Err(ModelError::NegativeMass { degree: 2, .. })
        ));
        assert!(matches!(
            make_distribution(
                &DistributionKind::Custom {
                    masses: vec![0.0, 0.0]
                },
                2
            ),
            Err(ModelError::DegenerateMasses(_))
        ));
    }

    #[test]
    fn average_infection_examples() {
        let dist = baseline_distribution();
        assert_eq!(average_infection(&[0.0; 4], &dist).unwrap(), 0.0);
        assert!((average_infection(&[1.0; 4], &dist).unwrap() - 1.0).abs() < 1e-15);
        let v = average_infection(&[0.1, 0.2, 0.3, 0.4], &dist).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!(average_infection(&[0.1; 3], &dist).is_err());
    }

    #[test]
    fn params_json_keys() {
        let json = serde_json::to_value(baseline_params(10.0)).unwrap();
        for key in [
            "alpha", "beta_P", "beta_U", "gamma", "L", "c_P", "c_IU", "c_IP", "epsilon",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn masses_normalize(weights in prop::collection::vec(0.0f64..1e6, 1..40), scale in 1e-6f64..1e6) {
                prop_assume!(weights.iter().any(|&w| w > 0.0));
                let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
                let dist = DegreeDistribution::from_masses(scaled).unwrap();
                let sum: f64 = dist.masses().iter().sum();
                prop_assert!((sum - 1.0).abs() <= MASS_SUM_TOLERANCE);
                let avg: f64 = dist.masses().iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).sum();
                prop_assert!((avg - dist.avg_degree()).abs() < 1e-12 * avg.max(1.0));
            }

            #[test]
            fn average_infection_is_linear_and_bounded(
                y1 in prop::collection::vec(0.0f64..=1.0, 6),
                y2 in prop::collection::vec(0.0f64..=1.0, 6),
                t in 0.0f64..=1.0,
            ) {
                let dist = DegreeDistribution::from_masses(vec![1.0, 2.0, 3.0, 0.5, 0.1, 4.0]).unwrap();
                let mix: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
                let lhs = average_infection(&mix, &dist).unwrap();
                let rhs = t * average_infection(&y1, &dist).unwrap() + (1.0 - t) * average_infection(&y2, &dist).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-14);
                prop_assert!((0.0..=1.0 + 1e-15).contains(&lhs));
            }
        }
    }
}

//! Exact equilibrium engine for the reduced (ε → 0) epidemic.
//!
//! Susceptibles of degree `d` protect when Θ exceeds `Θ^d_th = c_P / (L (1-α) d)`.
//! The thresholds split `[0,1]` into intervals `I_{d*}` on which degrees below
//! `d*` stay unprotected and degrees `d*` and above protect. For each `d*` the
//! regime has at most one endemic Θ, `theta_ee(d*)`, which is non-decreasing in
//! `d*`; the equilibrium is found by scanning `d*` upward for the first regime
//! whose endemic Θ exceeds its own threshold. If that Θ overshoots the upper end
//! of the interval, the equilibrium sits on the threshold surface below it with
//! a mixed strategy at the boundary degree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{stationary_infection, FixedPointTerms};
use crate::model::{DegreeDistribution, ModelParams};

/// Slack used when comparing an endemic Θ against a threshold.
pub const CASE_SLACK: f64 = 1e-12;
/// Mixing fractions this far outside `[0,1]` are clamped; beyond it they are an error.
pub const MIXING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EquilibriumError {
    #[error("regime index d* = {d_star} outside 1..={max}")]
    RegimeOutOfRange { d_star: usize, max: usize },
    #[error("boundary degree {0} has no lower neighbour in the threshold ladder")]
    NoBoundaryDegree(usize),
    #[error("mixing fraction {z} at degree {degree} lies outside [0,1]: inconsistent case classification")]
    InconsistentMixing { degree: usize, z: f64 },
}

/// Per-degree protection thresholds and the interval ladder they induce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSet {
    /// `Θ^d_th`, indexed by `d - 1`; strictly decreasing.
    pub theta_th: Vec<f64>,
    /// Smallest degree whose threshold is below 1; `None` when no degree ever protects.
    pub d_min: Option<usize>,
}

impl ThresholdSet {
    pub fn d_max(&self) -> usize {
        self.theta_th.len()
    }

    /// `Θ^d_th` with the conventions `Θ^{d_max+1}_th = 0` and `Θ^0_th = +∞`.
    pub fn threshold(&self, d: usize) -> f64 {
        match d {
            0 => f64::INFINITY,
            d if d > self.d_max() => 0.0,
            d => self.theta_th[d - 1],
        }
    }

    /// True when every threshold is at least 1, so nobody ever protects.
    pub fn no_protection(&self) -> bool {
        self.d_min.is_none()
    }

    /// Open interval `(lower, upper)` of regime `d*`. The upper end is capped at 1
    /// and the lowest interval is closed at 0.
    pub fn interval(&self, d_star: usize) -> (f64, f64) {
        (self.threshold(d_star), self.threshold(d_star - 1).min(1.0))
    }
}

pub fn thresholds(params: &ModelParams, dist: &DegreeDistribution) -> ThresholdSet {
    let scale = params.cost_protect / (params.loss * (1.0 - params.alpha));
    let theta_th: Vec<f64> = dist.degrees().map(|d| scale / d as f64).collect();
    let d_min = theta_th.iter().position(|&t| t < 1.0).map(|i| i + 1);
    ThresholdSet { theta_th, d_min }
}

fn check_regime(d_star: usize, dist: &DegreeDistribution) -> Result<(), EquilibriumError> {
    let max = dist.d_max() + 1;
    if (1..=max).contains(&d_star) {
        Ok(())
    } else {
        Err(EquilibriumError::RegimeOutOfRange { d_star, max })
    }
}

/// Exposure multipliers of regime `d*`: 1 below `d*`, α from `d*` on.
pub fn regime_exposure(d_star: usize, alpha: f64, d_max: usize) -> Vec<f64> {
    (1..=d_max)
        .map(|d| if d < d_star { 1.0 } else { alpha })
        .collect()
}

fn regime_terms<'a>(
    d_star: usize,
    params: &ModelParams,
    dist: &'a DegreeDistribution,
) -> FixedPointTerms<'a> {
    FixedPointTerms {
        neighbor: dist.neighbor_weights(),
        transmission: params.beta_p.clone(),
        exposure: regime_exposure(d_star, params.alpha, dist.d_max()),
        gamma: params.gamma,
    }
}

/// `R(d*)`: the threshold quantity of regime `d*`; equals the spectral radius
/// of the rank-one NIMFA matrix built for that regime.
pub fn reproduction_number(
    d_star: usize,
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> Result<f64, EquilibriumError> {
    check_regime(d_star, dist)?;
    Ok(regime_terms(d_star, params, dist).at_zero())
}

/// Endemic Θ of regime `d*`, or 0 when `R(d*) <= 1`.
pub fn theta_ee(
    d_star: usize,
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> Result<f64, EquilibriumError> {
    check_regime(d_star, dist)?;
    Ok(regime_terms(d_star, params, dist)
        .positive_root()
        .unwrap_or(0.0))
}

/// Unprotected share `z̄` at degree `d_eq - 1` that makes `Θ^{d_eq-1}_th` a
/// stationary Θ, with degrees below unprotected and above protected.
pub fn boundary_mixing_fraction(
    d_eq: usize,
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> Result<f64, EquilibriumError> {
    check_regime(d_eq, dist)?;
    if d_eq < 2 {
        return Err(EquilibriumError::NoBoundaryDegree(d_eq));
    }
    let k = d_eq - 1;
    let theta = thresholds(params, dist).threshold(k);
    let nb = dist.neighbor_weights();
    let gamma = params.gamma;

    // Residual left for degree k once every other degree is accounted for.
    let residual = 1.0
        - dist
            .degrees()
            .filter(|&d| d != k)
            .map(|d| {
                let w = if d < k { 1.0 } else { params.alpha };
                let wd = w * d as f64;
                nb[d - 1] * params.beta_p[d - 1] * wd / (gamma + wd * theta)
            })
            .sum::<f64>();

    // residual = c w / (γ + w k Θ) with c = nb_k β_k k, solved for w.
    let kf = k as f64;
    let c = nb[k - 1] * params.beta_p[k - 1] * kf;
    let w = residual * gamma / (c - residual * kf * theta);
    let z = (w - params.alpha) / (1.0 - params.alpha);
    if !z.is_finite() || !(-MIXING_TOLERANCE..=1.0 + MIXING_TOLERANCE).contains(&z) {
        return Err(EquilibriumError::InconsistentMixing { degree: k, z });
    }
    Ok(z.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Only the disease-free equilibrium exists.
    #[serde(rename = "dfe-only")]
    DiseaseFree,
    /// Endemic Θ strictly inside its interval; pure strategies everywhere.
    #[serde(rename = "endemic-interior")]
    EndemicInterior,
    /// Endemic Θ on a threshold; one degree mixes.
    #[serde(rename = "endemic-boundary")]
    EndemicBoundary,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::DiseaseFree => "dfe-only",
            Regime::EndemicInterior => "endemic-interior",
            Regime::EndemicBoundary => "endemic-boundary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub regime: Regime,
    pub theta_star: f64,
    /// Pivot degree of the classification; `None` for the disease-free case
    /// and when no degree ever protects.
    pub d_eq: Option<usize>,
    #[serde(rename = "y")]
    pub y_star: Vec<f64>,
    /// Unprotected share among susceptibles per degree.
    #[serde(rename = "zS")]
    pub z_s_star: Vec<f64>,
    #[serde(rename = "R_max")]
    pub r_max: f64,
}

impl EquilibriumResult {
    /// Degree carrying the mixed strategy in the boundary case.
    pub fn boundary_degree(&self) -> Option<usize> {
        match (self.regime, self.d_eq) {
            (Regime::EndemicBoundary, Some(d)) => Some(d - 1),
            _ => None,
        }
    }

    pub fn mixing_fraction(&self) -> Option<f64> {
        self.boundary_degree().map(|d| self.z_s_star[d - 1])
    }

    pub fn y_avg(&self, dist: &DegreeDistribution) -> f64 {
        dist.masses()
            .iter()
            .zip(&self.y_star)
            .map(|(m, y)| m * y)
            .sum()
    }
}

fn endemic(
    regime: Regime,
    theta: f64,
    d_eq: Option<usize>,
    z_s: Vec<f64>,
    params: &ModelParams,
    r_max: f64,
) -> EquilibriumResult {
    let exposure: Vec<f64> = z_s.iter().map(|&z| z + params.alpha * (1.0 - z)).collect();
    EquilibriumResult {
        regime,
        theta_star: theta,
        d_eq,
        y_star: stationary_infection(&exposure, params.gamma, theta),
        z_s_star: z_s,
        r_max,
    }
}

/// Classifies the equilibrium of the reduced dynamics and assembles it.
pub fn find_equilibrium(
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> Result<EquilibriumResult, EquilibriumError> {
    let n = dist.d_max();
    let r_max = reproduction_number(n + 1, params, dist)?;
    if r_max <= 1.0 {
        return Ok(EquilibriumResult {
            regime: Regime::DiseaseFree,
            theta_star: 0.0,
            d_eq: None,
            y_star: vec![0.0; n],
            z_s_star: vec![1.0; n],
            r_max,
        });
    }

    let th = thresholds(params, dist);
    let Some(d_min) = th.d_min else {
        // No threshold below 1 and Θ < 1 at any endemic point: everyone stays unprotected.
        let theta = theta_ee(n + 1, params, dist)?;
        return Ok(endemic(
            Regime::EndemicInterior,
            theta,
            None,
            vec![1.0; n],
            params,
            r_max,
        ));
    };

    let mut d_eq = n + 1;
    let mut theta = theta_ee(n + 1, params, dist)?;
    for d in d_min..=n {
        let t = theta_ee(d, params, dist)?;
        if t > th.threshold(d) + CASE_SLACK {
            d_eq = d;
            theta = t;
            break;
        }
    }

    let upper = th.threshold(d_eq - 1);
    if d_eq > d_min && theta >= upper - CASE_SLACK {
        let k = d_eq - 1;
        let z_bar = boundary_mixing_fraction(d_eq, params, dist)?;
        let z_s = (1..=n)
            .map(|d| match d.cmp(&k) {
                std::cmp::Ordering::Less => 1.0,
                std::cmp::Ordering::Equal => z_bar,
                std::cmp::Ordering::Greater => 0.0,
            })
            .collect();
        Ok(endemic(
            Regime::EndemicBoundary,
            upper,
            Some(d_eq),
            z_s,
            params,
            r_max,
        ))
    } else {
        let z_s = (1..=n).map(|d| if d < d_eq { 1.0 } else { 0.0 }).collect();
        Ok(endemic(
            Regime::EndemicInterior,
            theta,
            Some(d_eq),
            z_s,
            params,
            r_max,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{profile_fixed_point_sum, stationary_theta_for_profile, theta_full};
    use crate::model::{baseline_distribution, baseline_params, SocialState};

    #[test]
    fn baseline_thresholds() {
        let dist = baseline_distribution();
        let t10 = thresholds(&baseline_params(10.0), &dist);
        assert_eq!(t10.theta_th, vec![1.0, 0.5, 1.0 / 3.0, 0.25]);
        assert_eq!(t10.d_min, Some(2));
        let t8 = thresholds(&baseline_params(8.0), &dist);
        let expected = [0.8, 0.4, 4.0 / 15.0, 0.2];
        for (a, b) in t8.theta_th.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(t8.d_min, Some(1));
        assert_eq!(t8.threshold(5), 0.0);
        assert_eq!(t8.threshold(0), f64::INFINITY);
    }

    #[test]
    fn threshold_equal_to_one() {
        let p = baseline_params(20.0 * 0.5 * 3.0);
        let t = thresholds(&p, &baseline_distribution());
        assert_eq!(t.threshold(3), 1.0);
        assert_eq!(t.d_min, Some(4));
    }

    #[test]
    fn reproduction_examples() {
        let dist = baseline_distribution();
        let p = baseline_params(10.0);
        // Σ d² 0.25 0.6 / (2.5 0.3) over d = 1..4 = 0.2 * 30
        assert!((reproduction_number(5, &p, &dist).unwrap() - 6.0).abs() < 1e-12);
        let mut p1 = p.clone();
        p1.alpha = 1.0;
        assert_eq!(
            reproduction_number(1, &p1, &dist).unwrap(),
            reproduction_number(5, &p1, &dist).unwrap()
        );
        let mut p0 = p.clone();
        p0.beta_p = vec![0.0; 4];
        assert_eq!(reproduction_number(3, &p0, &dist).unwrap(), 0.0);
        assert!(reproduction_number(6, &p, &dist).is_err());
        assert!(reproduction_number(0, &p, &dist).is_err());
    }

    #[test]
    fn baseline_endemic_theta() {
        let dist = baseline_distribution();
        let p = baseline_params(10.0);
        for (d, v) in [(2, 0.3961), (3, 0.4231), (4, 0.4543), (5, 0.4860)] {
            let t = theta_ee(d, &p, &dist).unwrap();
            assert!((t - v).abs() < 5e-4, "d* = {d}: {t}");
        }
        assert_eq!(theta_ee(5, &p.with_beta_p(0.01), &dist).unwrap(), 0.0);
    }

    #[test]
    fn mixing_fraction_baseline() {
        // Oracle, by hand: Θ = 0.4, residual = 1 - 0.085714... - 0.3 - 0.436363...,
        // residual = 0.24 w / (0.3 + 0.8 w)  =>  w = 0.3 R / (0.24 - 0.8 R).
        let residual = 1.0 - 0.6 / 7.0 - 0.3 - 0.48 / 1.1;
        let w = 0.3 * residual / (0.24 - 0.8 * residual);
        let oracle = (w - 0.5) / 0.5;
        let (p, dist) = (baseline_params(8.0), baseline_distribution());
        let z = boundary_mixing_fraction(3, &p, &dist).unwrap();
        assert!((z - oracle).abs() < 1e-12, "{z} vs {oracle}");
        assert!((z - 0.093).abs() < 1e-3);

        // Substituting the full profile back: Θ = 0.4 solves the identity.
        let z_s = [1.0, z, 0.0, 0.0];
        let sum = profile_fixed_point_sum(0.4, &z_s, &[0.0; 4], &p, &dist);
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixing_fraction_extremes() {
        // Choose c_P so that the threshold at degree 2 equals the regime-3
        // endemic Θ: then degree 2 is exactly on the fully unprotected end.
        let dist = baseline_distribution();
        let base = baseline_params(10.0);
        let t3 = theta_ee(3, &base, &dist).unwrap();
        let p = base.clone().with_cost_protect(t3 * 20.0 * 0.5 * 2.0);
        let z = boundary_mixing_fraction(3, &p, &dist).unwrap();
        assert!((z - 1.0).abs() < 1e-9, "{z}");
        // Threshold at degree 2 equal to the regime-2 endemic Θ: fully protected end.
        let t2 = theta_ee(2, &base, &dist).unwrap();
        let p = base.with_cost_protect(t2 * 20.0 * 0.5 * 2.0);
        let z = boundary_mixing_fraction(3, &p, &dist).unwrap();
        assert!(z.abs() < 1e-9, "{z}");
    }

    #[test]
    fn mixing_fraction_inconsistent_case() {
        // c_P = 10 is an interior case; forcing the boundary formula fails.
        let err = boundary_mixing_fraction(3, &baseline_params(10.0), &baseline_distribution());
        assert!(matches!(
            err,
            Err(EquilibriumError::InconsistentMixing { degree: 2, .. })
        ));
        assert!(
            boundary_mixing_fraction(1, &baseline_params(8.0), &baseline_distribution()).is_err()
        );
    }

    #[test]
    fn classifier_interior_case() {
        let dist = baseline_distribution();
        let r = find_equilibrium(&baseline_params(10.0), &dist).unwrap();
        assert_eq!(r.regime, Regime::EndemicInterior);
        assert_eq!(r.d_eq, Some(3));
        assert!((r.theta_star - 0.4231).abs() < 5e-4);
        assert_eq!(r.z_s_star, vec![1.0, 1.0, 0.0, 0.0]);
        assert!((r.r_max - 6.0).abs() < 1e-12);
    }

    #[test]
    fn classifier_boundary_case() {
        let dist = baseline_distribution();
        let p = baseline_params(8.0);
        let r = find_equilibrium(&p, &dist).unwrap();
        assert_eq!(r.regime, Regime::EndemicBoundary);
        assert_eq!(r.d_eq, Some(3));
        assert_eq!(r.theta_star, thresholds(&p, &dist).threshold(2));
        assert!((r.theta_star - 0.4).abs() < 1e-15);
        assert_eq!(r.boundary_degree(), Some(2));
        assert!((r.mixing_fraction().unwrap() - 0.0931).abs() < 1e-4);
    }

    #[test]
    fn classifier_disease_free() {
        let dist = baseline_distribution();
        let r = find_equilibrium(&baseline_params(10.0).with_beta_p(0.01), &dist).unwrap();
        assert_eq!(r.regime, Regime::DiseaseFree);
        assert_eq!(r.theta_star, 0.0);
        assert!(r.y_star.iter().all(|&y| y == 0.0));
        assert!((r.r_max - 0.1).abs() < 1e-12);
    }

    #[test]
    fn classifier_no_protection_regime() {
        // Thresholds 4.5, 2.25, 1.5, 1.125: all above 1.
        let dist = baseline_distribution();
        let p = baseline_params(45.0);
        let th = thresholds(&p, &dist);
        assert!(th.no_protection());
        let r = find_equilibrium(&p, &dist).unwrap();
        assert_eq!(r.regime, Regime::EndemicInterior);
        assert_eq!(r.d_eq, None);
        assert_eq!(r.z_s_star, vec![1.0; 4]);
        assert!((r.theta_star - theta_ee(5, &p, &dist).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_consistency() {
        let dist = baseline_distribution();
        for cp in [1.0, 5.0, 8.0, 9.0, 10.0, 12.0, 20.0] {
            let p = baseline_params(cp);
            let r = find_equilibrium(&p, &dist).unwrap();
            let state = SocialState {
                y: r.y_star.clone(),
                z_s: r.z_s_star.clone(),
                z_i: vec![0.0; 4],
            };
            assert!((theta_full(&state, &p, &dist) - r.theta_star).abs() < 1e-8);
            let sum = profile_fixed_point_sum(r.theta_star, &r.z_s_star, &[0.0; 4], &p, &dist);
            assert!((sum - 1.0).abs() < 1e-8, "c_P = {cp}");
        }
    }

    #[test]
    fn profile_solver_agrees_with_regime_solver() {
        let (p, dist) = (baseline_params(10.0), baseline_distribution());
        let all_protected = stationary_theta_for_profile(&[0.0; 4], &[0.0; 4], &p, &dist).unwrap();
        assert!((all_protected.theta() - theta_ee(1, &p, &dist).unwrap()).abs() < 1e-14);
        let none = stationary_theta_for_profile(&[1.0; 4], &[0.0; 4], &p, &dist).unwrap();
        assert!((none.theta() - theta_ee(5, &p, &dist).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn per_degree_ordering_within_blocks() {
        let dist = baseline_distribution();
        let r = find_equilibrium(&baseline_params(10.0), &dist).unwrap();
        assert!(r.y_star[0] < r.y_star[1]);
        assert!(r.y_star[2] < r.y_star[3]);
    }

    #[test]
    fn json_shape() {
        let r = find_equilibrium(&baseline_params(8.0), &baseline_distribution()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["regime"], "endemic-boundary");
        assert_eq!(v["d_eq"], 3);
        for key in ["theta_star", "y", "zS", "R_max"] {
            assert!(v.get(key).is_some());
        }
    }
}

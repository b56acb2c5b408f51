//! The slow epidemic-only system obtained when strategy revision is infinitely
//! fast: a switched system whose vector field changes on the threshold surfaces
//! `Θ(y) = Θ^d_th`, with Filippov sliding on those surfaces.

use std::fmt;

use serde::Serialize;

use crate::dynamics::{
    clamp_unit, exposure, max_abs_diff, report_clamp, theta_reduced, DynamicsError, Integration,
    Trajectory, CONVERGENCE_THRESHOLD,
};
use crate::equilibrium::{regime_exposure, thresholds};
use crate::model::{average_infection, DegreeDistribution, ModelParams, SocialState};

/// Relative width of a threshold surface for sliding detection.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;

fn boundary_width(threshold: f64) -> f64 {
    BOUNDARY_TOLERANCE * threshold.max(1.0)
}

/// Which interval `I_{d*}` Θ lies in, or which threshold surface it sits on.
///
/// Off a surface, degrees below `d_star` are unprotected and the rest protect.
/// On the surface of degree `d'`, `d_star` is `d' + 1` (the regime just below
/// the surface) and degree `d'` mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegimeIndex {
    pub d_star: usize,
    pub on_boundary: Option<usize>,
}

impl RegimeIndex {
    pub fn interval(d_star: usize) -> Self {
        Self {
            d_star,
            on_boundary: None,
        }
    }
}

impl fmt::Display for RegimeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.on_boundary {
            Some(d) => write!(f, "S{d}"),
            None => write!(f, "I{}", self.d_star),
        }
    }
}

/// Locates Θ in the ladder of per-degree thresholds (decreasing in degree).
pub fn classify_regime(theta: f64, thresholds: &[f64]) -> RegimeIndex {
    if let Some(i) = thresholds
        .iter()
        .position(|&t| (theta - t).abs() <= boundary_width(t))
    {
        return RegimeIndex {
            d_star: i + 2,
            on_boundary: Some(i + 1),
        };
    }
    let above = thresholds.iter().filter(|&&t| t > theta).count();
    RegimeIndex::interval(above + 1)
}

/// Field of the switched system at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedField {
    pub rate: Vec<f64>,
    pub regime: RegimeIndex,
    /// Selected unprotected share per degree (the sliding value at the boundary degree).
    pub strategy: Vec<f64>,
    /// Whether the equivalent-control (sliding) selection was used.
    pub sliding: bool,
}

fn rate_with_exposure(y: &[f64], w: &[f64], gamma: f64, theta: f64) -> Vec<f64> {
    y.iter()
        .zip(w)
        .enumerate()
        .map(|(i, (&y, &w))| -gamma * y + (1.0 - y) * w * (i + 1) as f64 * theta)
        .collect()
}

/// Exposure at boundary degree `k` selected by the Filippov convention.
/// Returns `(w, sliding)`.
fn filippov_exposure(
    y: &[f64],
    k: usize,
    theta: f64,
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> (f64, bool) {
    let n = y.len();
    let nb = dist.neighbor_weights();
    let alpha = params.alpha;
    // dΘ/dt = a + b w, linear in the boundary degree's exposure w.
    let mut a = 0.0;
    for i in 0..n {
        let d = i + 1;
        let c = nb[i] * params.beta_p[i];
        if d == k {
            a -= c * params.gamma * y[i];
        } else {
            let w = if d < k { 1.0 } else { alpha };
            a += c * (-params.gamma * y[i] + (1.0 - y[i]) * w * d as f64 * theta);
        }
    }
    let b = nb[k - 1] * params.beta_p[k - 1] * (1.0 - y[k - 1]) * k as f64 * theta;
    if b > 0.0 {
        let w = -a / b;
        if (alpha..=1.0).contains(&w) {
            return (w, true);
        }
    }
    // Both one-sided fields point the same way: follow the side being entered.
    if a + b <= 0.0 {
        (1.0, false)
    } else {
        (alpha, false)
    }
}

fn field_with_thresholds(
    y: &[f64],
    params: &ModelParams,
    dist: &DegreeDistribution,
    theta_th: &[f64],
) -> SwitchedField {
    let theta = theta_reduced(y, params, dist);
    let regime = classify_regime(theta, theta_th);
    let n = y.len();
    let mut w = regime_exposure(regime.d_star, params.alpha, n);
    let mut sliding = false;
    if let Some(k) = regime.on_boundary {
        let (wk, s) = filippov_exposure(y, k, theta, params, dist);
        w[k - 1] = wk;
        sliding = s;
    }
    let strategy = w
        .iter()
        .map(|&w| ((w - params.alpha) / (1.0 - params.alpha)).clamp(0.0, 1.0))
        .collect();
    SwitchedField {
        rate: rate_with_exposure(y, &w, params.gamma, theta),
        regime,
        strategy,
        sliding,
    }
}

/// Field of the switched system, with the sliding selection on threshold surfaces.
pub fn switched_rhs(y: &[f64], params: &ModelParams, dist: &DegreeDistribution) -> SwitchedField {
    let th = thresholds(params, dist);
    field_with_thresholds(y, params, dist, &th.theta_th)
}

/// Field of the fixed regime `d*`: degrees below `d*` unprotected, the rest protected.
pub fn regime_rhs(
    y: &[f64],
    d_star: usize,
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> Vec<f64> {
    let w = regime_exposure(d_star, params.alpha, y.len());
    rate_with_exposure(y, &w, params.gamma, theta_reduced(y, params, dist))
}

/// Moves `y` along the Θ-gradient so that Θ(y) equals `target`.
fn project_onto_surface(
    y: &mut [f64],
    target: f64,
    params: &ModelParams,
    dist: &DegreeDistribution,
) {
    let grad: Vec<f64> = dist
        .neighbor_weights()
        .iter()
        .zip(&params.beta_p)
        .map(|(nb, b)| nb * b)
        .collect();
    let norm2: f64 = grad.iter().map(|g| g * g).sum();
    if norm2 == 0.0 {
        return;
    }
    let shift = (target - theta_reduced(y, params, dist)) / norm2;
    for (yi, g) in y.iter_mut().zip(&grad) {
        *yi += shift * g;
    }
}

struct Stepper<'a> {
    params: &'a ModelParams,
    dist: &'a DegreeDistribution,
    opts: &'a Integration,
    traj: Trajectory,
    regimes: Vec<RegimeIndex>,
    snapshot: Vec<f64>,
    steps: usize,
}

impl<'a> Stepper<'a> {
    fn new(
        params: &'a ModelParams,
        dist: &'a DegreeDistribution,
        opts: &'a Integration,
        y0: &[f64],
    ) -> Result<Self, DynamicsError> {
        dist.check_len(y0.len())?;
        let steps = opts.check()?;
        Ok(Self {
            params,
            dist,
            opts,
            traj: Trajectory::default(),
            regimes: Vec::new(),
            snapshot: y0.to_vec(),
            steps,
        })
    }

    fn record(
        &mut self,
        t: f64,
        y: &[f64],
        strategy: Vec<f64>,
        regime: RegimeIndex,
    ) -> Result<(), DynamicsError> {
        let n = y.len();
        let state = SocialState {
            y: y.to_vec(),
            z_s: strategy,
            z_i: vec![0.0; n],
        };
        let y_avg = average_infection(y, self.dist)?;
        let theta = theta_reduced(y, self.params, self.dist);
        self.traj.push(t, state, theta, y_avg);
        self.regimes.push(regime);
        Ok(())
    }

    /// Post-step bookkeeping. Returns `(record, stop)`.
    fn after_step(&mut self, k: usize, y: &mut [f64]) -> Result<(bool, bool), DynamicsError> {
        let t = k as f64 * self.opts.step;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { step: k, time: t });
        }
        if self.opts.clamp {
            let c = clamp_unit(y);
            self.traj.max_clamp = self.traj.max_clamp.max(c);
        }
        let mut stop = false;
        if k.is_multiple_of(self.opts.steps_per_unit()) {
            if self.traj.converged_at.is_none()
                && max_abs_diff(y, &self.snapshot) < CONVERGENCE_THRESHOLD
            {
                self.traj.converged_at = Some(t);
                stop = self.opts.stop_when_converged;
            }
            self.snapshot.copy_from_slice(y);
        }
        Ok((
            k.is_multiple_of(self.opts.record_every) || k == self.steps || stop,
            stop,
        ))
    }

    fn finish(mut self, kind: &str) -> Trajectory {
        self.traj.regimes = Some(self.regimes);
        report_clamp(kind, self.traj.max_clamp);
        self.traj
    }
}

/// Euler integration of the switched system.
///
/// When a step crosses a threshold surface on which the sliding condition
/// holds, the state is projected onto that surface; while sliding, each step
/// is projected back onto it.
pub fn integrate_switched(
    y0: &[f64],
    params: &ModelParams,
    dist: &DegreeDistribution,
    opts: &Integration,
) -> Result<Trajectory, DynamicsError> {
    let mut stepper = Stepper::new(params, dist, opts, y0)?;
    let theta_th = thresholds(params, dist).theta_th;
    let h = opts.step;
    let mut y = y0.to_vec();
    let field0 = field_with_thresholds(&y, params, dist, &theta_th);
    stepper.record(0.0, &y, field0.strategy, field0.regime)?;

    for k in 1..=stepper.steps {
        let field = field_with_thresholds(&y, params, dist, &theta_th);
        let theta_old = theta_reduced(&y, params, dist);
        for (yi, r) in y.iter_mut().zip(&field.rate) {
            *yi += h * r;
        }
        let theta_new = theta_reduced(&y, params, dist);

        if let (Some(b), true) = (field.regime.on_boundary, field.sliding) {
            project_onto_surface(&mut y, theta_th[b - 1], params, dist);
        } else if let Some(b) =
            first_crossed(theta_old, theta_new, &theta_th, field.regime.on_boundary)
        {
            let mut candidate = y.clone();
            project_onto_surface(&mut candidate, theta_th[b - 1], params, dist);
            let theta_c = theta_reduced(&candidate, params, dist);
            if candidate.iter().all(|v| (0.0..=1.0).contains(v))
                && filippov_exposure(&candidate, b, theta_c, params, dist).1
            {
                y = candidate;
            }
        }

        let (record, stop) = stepper.after_step(k, &mut y)?;
        if record {
            let f = field_with_thresholds(&y, params, dist, &theta_th);
            stepper.record(k as f64 * h, &y, f.strategy, f.regime)?;
        }
        if stop {
            break;
        }
    }
    Ok(stepper.finish("switched"))
}

/// First threshold strictly crossed going from `from` to `to`, skipping the
/// surface the step started on.
fn first_crossed(from: f64, to: f64, theta_th: &[f64], start: Option<usize>) -> Option<usize> {
    let (lo, hi) = if from < to { (from, to) } else { (to, from) };
    let crossed = theta_th
        .iter()
        .enumerate()
        .filter(|&(i, &t)| Some(i + 1) != start && t > lo && t < hi)
        .map(|(i, _)| i + 1);
    // Thresholds decrease with degree: rising Θ meets the largest degree first.
    if to > from {
        crossed.max()
    } else {
        crossed.min()
    }
}

/// Euler integration with the regime frozen at `d*` (no switching).
pub fn integrate_regime(
    y0: &[f64],
    d_star: usize,
    params: &ModelParams,
    dist: &DegreeDistribution,
    opts: &Integration,
) -> Result<Trajectory, DynamicsError> {
    if d_star == 0 || d_star > dist.d_max() + 1 {
        return Err(DynamicsError::BadDegree(d_star));
    }
    let mut stepper = Stepper::new(params, dist, opts, y0)?;
    let strategy: Vec<f64> = (1..=y0.len())
        .map(|d| if d < d_star { 1.0 } else { 0.0 })
        .collect();
    let regime = RegimeIndex::interval(d_star);
    let h = opts.step;
    let mut y = y0.to_vec();
    stepper.record(0.0, &y, strategy.clone(), regime)?;
    for k in 1..=stepper.steps {
        let rate = regime_rhs(&y, d_star, params, dist);
        for (yi, r) in y.iter_mut().zip(&rate) {
            *yi += h * r;
        }
        let (record, stop) = stepper.after_step(k, &mut y)?;
        if record {
            stepper.record(k as f64 * h, &y, strategy.clone(), regime)?;
        }
        if stop {
            break;
        }
    }
    Ok(stepper.finish("regime"))
}

/// Exposure implied by a selected strategy vector; used when comparing a
/// switched state against the coupled one.
pub fn strategy_exposure(strategy: &[f64], alpha: f64) -> Vec<f64> {
    strategy.iter().map(|&z| exposure(z, alpha)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::find_equilibrium;
    use crate::model::{baseline_distribution, baseline_params};

    #[test]
    fn classify_examples() {
        let th10 = thresholds(&baseline_params(10.0), &baseline_distribution()).theta_th;
        assert_eq!(classify_regime(0.4231, &th10), RegimeIndex::interval(3));
        assert_eq!(classify_regime(0.0, &th10), RegimeIndex::interval(5));
        assert_eq!(classify_regime(0.9, &th10), RegimeIndex::interval(2));
        let th8 = thresholds(&baseline_params(8.0), &baseline_distribution()).theta_th;
        assert_eq!(
            classify_regime(0.4, &th8),
            RegimeIndex {
                d_star: 3,
                on_boundary: Some(2)
            }
        );
        assert_eq!(classify_regime(0.4 + 1e-7, &th8), RegimeIndex::interval(2));
        assert_eq!(classify_regime(0.85, &th8), RegimeIndex::interval(1));
    }

    #[test]
    fn regime_display() {
        assert_eq!(RegimeIndex::interval(3).to_string(), "I3");
        assert_eq!(
            RegimeIndex {
                d_star: 3,
                on_boundary: Some(2)
            }
            .to_string(),
            "S2"
        );
    }

    #[test]
    fn zero_is_stationary() {
        let f = switched_rhs(&[0.0; 4], &baseline_params(10.0), &baseline_distribution());
        assert!(f.rate.iter().all(|&r| r == 0.0));
        assert_eq!(f.regime, RegimeIndex::interval(5));
    }

    #[test]
    fn interior_equilibrium_is_stationary() {
        let (p, dist) = (baseline_params(10.0), baseline_distribution());
        let eq = find_equilibrium(&p, &dist).unwrap();
        let f = switched_rhs(&eq.y_star, &p, &dist);
        assert_eq!(f.regime, RegimeIndex::interval(3));
        assert!(f.rate.iter().all(|r| r.abs() < 1e-8), "{:?}", f.rate);
    }

    #[test]
    fn boundary_equilibrium_slides_with_mixing_fraction() {
        let (p, dist) = (baseline_params(8.0), baseline_distribution());
        let eq = find_equilibrium(&p, &dist).unwrap();
        let f = switched_rhs(&eq.y_star, &p, &dist);
        assert_eq!(f.regime.on_boundary, Some(2));
        assert!(f.sliding);
        assert!((f.strategy[1] - eq.mixing_fraction().unwrap()).abs() < 1e-6);
        assert!(f.rate.iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn first_crossed_direction() {
        let th = [0.8, 0.4, 0.3, 0.2];
        assert_eq!(first_crossed(0.1, 0.5, &th, None), Some(4));
        assert_eq!(first_crossed(0.5, 0.1, &th, None), Some(2));
        assert_eq!(first_crossed(0.41, 0.5, &th, None), None);
        assert_eq!(first_crossed(0.4, 0.35, &th, Some(2)), None);
    }

    #[test]
    fn healthy_start_stays_healthy() {
        let traj = integrate_switched(
            &[0.0; 4],
            &baseline_params(10.0),
            &baseline_distribution(),
            &Integration::new(0.01, 10.0),
        )
        .unwrap();
        assert!(traj.states.iter().all(|s| s.y.iter().all(|&y| y == 0.0)));
    }

    #[test]
    fn switched_converges_interior() {
        let (p, dist) = (baseline_params(10.0), baseline_distribution());
        let traj = integrate_switched(
            &[0.1; 4],
            &p,
            &dist,
            &Integration::new(0.01, 200.0).record_every(100),
        )
        .unwrap();
        assert!((traj.final_theta().unwrap() - 0.4231).abs() < 1e-3);
    }

    #[test]
    fn switched_slides_in_boundary_case() {
        let (p, dist) = (baseline_params(8.0), baseline_distribution());
        let traj = integrate_switched(
            &[0.1; 4],
            &p,
            &dist,
            &Integration::new(0.01, 300.0).record_every(100),
        )
        .unwrap();
        assert!((traj.final_theta().unwrap() - 0.4).abs() < 1e-3);
        let regimes = traj.regimes.as_ref().unwrap();
        assert_eq!(regimes.last().unwrap().on_boundary, Some(2));
        let z = traj.last_state().unwrap().z_s[1];
        assert!(z > 0.0 && z < 1.0);
    }
}

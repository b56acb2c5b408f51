//! Coupled epidemic / replicator dynamics and the stationary-Θ solver.

use std::io::Write;

use log::{debug, warn};
use serde::Serialize;
use thiserror::Error;

use crate::model::{average_infection, DegreeDistribution, ModelError, ModelParams, SocialState};
use crate::output::{csv_writer, fmt_sig};
use crate::reduced::RegimeIndex;
use crate::roots::bisect_decreasing;

/// Default Euler step.
pub const DEFAULT_STEP: f64 = 0.01;
/// Max per-component change over one time unit below which a run counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-6;
/// Clamp corrections above this are reported as warnings.
pub const CLAMP_WARN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite state at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },
    #[error(
        "step must be positive and not exceed the horizon (step = {step}, horizon = {horizon})"
    )]
    BadStep { step: f64, horizon: f64 },
    #[error("degree class {0} out of range")]
    BadDegree(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Euler integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integration {
    pub step: f64,
    pub horizon: f64,
    /// Keep every n-th state in the trajectory. The last state is always kept.
    pub record_every: usize,
    /// Stop once the state moves less than [`CONVERGENCE_THRESHOLD`] over one time unit.
    pub stop_when_converged: bool,
    /// Clamp infection levels to `[0,1]` after each step. Strategy shares never leave it.
    pub clamp: bool,
}

impl Integration {
    pub fn new(step: f64, horizon: f64) -> Self {
        Self {
            step,
            horizon,
            record_every: 1,
            stop_when_converged: false,
            clamp: true,
        }
    }

    pub fn record_every(mut self, n: usize) -> Self {
        self.record_every = n.max(1);
        self
    }

    pub fn stop_when_converged(mut self, yes: bool) -> Self {
        self.stop_when_converged = yes;
        self
    }

    pub fn clamp(mut self, yes: bool) -> Self {
        self.clamp = yes;
        self
    }

    pub(crate) fn check(&self) -> Result<usize, DynamicsError> {
        if !(self.step > 0.0 && self.horizon >= self.step && self.horizon.is_finite()) {
            return Err(DynamicsError::BadStep {
                step: self.step,
                horizon: self.horizon,
            });
        }
        Ok((self.horizon / self.step).round() as usize)
    }

    pub(crate) fn steps_per_unit(&self) -> usize {
        ((1.0 / self.step).round() as usize).max(1)
    }
}

/// Sampled solution of either the coupled or the switched system.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SocialState>,
    pub theta: Vec<f64>,
    pub y_avg: Vec<f64>,
    /// Active regime per sample; only set by the switched integrator.
    pub regimes: Option<Vec<RegimeIndex>>,
    /// First whole time unit at which the convergence criterion held.
    pub converged_at: Option<f64>,
    /// Largest correction applied by clamping over the whole run.
    pub max_clamp: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&SocialState> {
        self.states.last()
    }

    pub fn final_theta(&self) -> Option<f64> {
        self.theta.last().copied()
    }

    pub fn final_y_avg(&self) -> Option<f64> {
        self.y_avg.last().copied()
    }

    pub(crate) fn push(&mut self, t: f64, state: SocialState, theta: f64, y_avg: f64) {
        self.times.push(t);
        self.states.push(state);
        self.theta.push(theta);
        self.y_avg.push(y_avg);
    }

    /// Writes `t, y_1..y_dmax, zS_1..zS_dmax, zI_1..zI_dmax, theta, y_avg`
    /// (plus `regime` for switched runs).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DynamicsError> {
        let d_max = self.states.first().map_or(0, SocialState::d_max);
        let mut out = csv_writer(w);
        let mut header = vec!["t".to_string()];
        for prefix in ["y", "zS", "zI"] {
            header.extend((1..=d_max).map(|d| format!("{prefix}_{d}")));
        }
        header.push("theta".into());
        header.push("y_avg".into());
        if self.regimes.is_some() {
            header.push("regime".into());
        }
        out.write_record(&header)?;
        for (k, state) in self.states.iter().enumerate() {
            let mut row = vec![fmt_sig(self.times[k])];
            row.extend(state.components().map(|&x| fmt_sig(x)));
            row.push(fmt_sig(self.theta[k]));
            row.push(fmt_sig(self.y_avg[k]));
            if let Some(regimes) = &self.regimes {
                row.push(regimes[k].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// `z + α(1 - z)`: relative infection exposure of susceptibles with unprotected share `z`.
#[inline]
pub(crate) fn exposure(z_s: f64, alpha: f64) -> f64 {
    z_s + alpha * (1.0 - z_s)
}

/// Neighbour transmission probability with the full strategy profile.
pub fn theta_full(state: &SocialState, params: &ModelParams, dist: &DegreeDistribution) -> f64 {
    dist.neighbor_weights()
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let z = state.z_i[i];
            nb * (params.beta_u[i] * z + params.beta_p[i] * (1.0 - z)) * state.y[i]
        })
        .sum()
}

/// Neighbour transmission probability when every infected agent protects.
pub fn theta_reduced(y: &[f64], params: &ModelParams, dist: &DegreeDistribution) -> f64 {
    dist.neighbor_weights()
        .iter()
        .zip(&params.beta_p)
        .zip(y)
        .map(|((nb, b), y)| nb * b * y)
        .sum()
}

/// Right-hand side of the slow-fast system; the replicator parts are scaled by `1/ε`.
pub fn coupled_rhs(
    state: &SocialState,
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> SocialState {
    let theta = theta_full(state, params, dist);
    let n = state.d_max();
    let inv_eps = 1.0 / params.epsilon;
    let infected_gain = params.cost_infected_protected - params.cost_infected_unprotected;
    let mut dy = Vec::with_capacity(n);
    let mut dzs = Vec::with_capacity(n);
    let mut dzi = Vec::with_capacity(n);
    for i in 0..n {
        let d = (i + 1) as f64;
        let (y, zs, zi) = (state.y[i], state.z_s[i], state.z_i[i]);
        dy.push(-params.gamma * y + (1.0 - y) * exposure(zs, params.alpha) * d * theta);
        let payoff_gap = params.cost_protect - params.loss * (1.0 - params.alpha) * d * theta;
        dzs.push(inv_eps * zs * (1.0 - zs) * payoff_gap);
        dzi.push(inv_eps * zi * (1.0 - zi) * infected_gain);
    }
    SocialState {
        y: dy,
        z_s: dzs,
        z_i: dzi,
    }
}

/// Per-capita replicator drives `g` with `ż = z(1-z)g`, for susceptibles and infected.
fn replicator_drives(theta: f64, params: &ModelParams, n: usize) -> (Vec<f64>, f64) {
    let inv_eps = 1.0 / params.epsilon;
    let drive_s = (0..n)
        .map(|i| {
            let d = (i + 1) as f64;
            inv_eps * (params.cost_protect - params.loss * (1.0 - params.alpha) * d * theta)
        })
        .collect();
    let drive_i = inv_eps * (params.cost_infected_protected - params.cost_infected_unprotected);
    (drive_s, drive_i)
}

/// A strategy share held as `(ln z, ln(1-z))`.
///
/// The Euler step `z + h z(1-z)g` factors as `z(1 + h(1-z)g)` and `(1-z)(1 - h z g)`, so
/// both sides update multiplicatively with the same iterate. Near either boundary the
/// small side keeps full relative precision, which a plain `f64` share loses to rounding.
#[derive(Debug, Clone, Copy)]
struct Share {
    ln_z: f64,
    ln_rest: f64,
}

impl Share {
    fn new(z: f64) -> Self {
        Self {
            ln_z: z.ln(),
            ln_rest: (1.0 - z).ln(),
        }
    }

    fn value(self) -> f64 {
        if self.ln_z <= self.ln_rest {
            self.ln_z.exp()
        } else {
            1.0 - self.ln_rest.exp()
        }
    }

    /// One Euler step with `hg = h·g`. An overshoot lands on the boundary and returns its size.
    fn step(&mut self, hg: f64) -> f64 {
        let (z, rest) = (self.ln_z.exp(), self.ln_rest.exp());
        let up = 1.0 + hg * rest;
        let down = 1.0 - hg * z;
        if up <= 0.0 {
            *self = Self::new(0.0);
            return -z * up;
        }
        if down <= 0.0 {
            *self = Self::new(1.0);
            return -rest * down;
        }
        self.ln_z += up.ln();
        self.ln_rest += down.ln();
        // The two factors preserve z + (1-z) exactly; remove rounding drift.
        let total = self.ln_z.exp() + self.ln_rest.exp();
        let shift = total.ln();
        self.ln_z -= shift;
        self.ln_rest -= shift;
        0.0
    }
}

/// Clamps in place to `[0,1]`, returning the largest correction made.
pub(crate) fn clamp_unit(v: &mut [f64]) -> f64 {
    let mut worst = 0.0f64;
    for x in v.iter_mut() {
        if *x < 0.0 {
            worst = worst.max(-*x);
            *x = 0.0;
        } else if *x > 1.0 {
            worst = worst.max(*x - 1.0);
            *x = 1.0;
        }
    }
    worst
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn report_clamp(kind: &str, max_clamp: f64) {
    if max_clamp > CLAMP_WARN {
        warn!("{kind}: clamping corrected the state by up to {max_clamp:e}");
    } else if max_clamp > 0.0 {
        debug!("{kind}: max clamp correction {max_clamp:e}");
    }
}

/// Explicit Euler integration of the coupled system.
pub fn integrate_coupled(
    state0: &SocialState,
    params: &ModelParams,
    dist: &DegreeDistribution,
    opts: &Integration,
) -> Result<Trajectory, DynamicsError> {
    let n = dist.d_max();
    for v in [&state0.y, &state0.z_s, &state0.z_i] {
        dist.check_len(v.len())?;
    }
    let steps = opts.check()?;
    let per_unit = opts.steps_per_unit();
    let h = opts.step;

    let mut traj = Trajectory::default();
    let mut state = state0.clone();
    let record =
        |traj: &mut Trajectory, t: f64, state: &SocialState| -> Result<(), DynamicsError> {
            let y_avg = average_infection(&state.y, dist)?;
            traj.push(t, state.clone(), theta_full(state, params, dist), y_avg);
            Ok(())
        };
    record(&mut traj, 0.0, &state)?;
    let mut snapshot: Vec<f64> = state.components().copied().collect();

    // Strategy shares start inside [0,1]; the Euler map never moves them out.
    clamp_unit(&mut state.z_s);
    clamp_unit(&mut state.z_i);
    let mut shares_s: Vec<Share> = state.z_s.iter().map(|&z| Share::new(z)).collect();
    let mut shares_i: Vec<Share> = state.z_i.iter().map(|&z| Share::new(z)).collect();

    for k in 1..=steps {
        let theta = theta_full(&state, params, dist);
        let rate = coupled_rhs(&state, params, dist);
        let (drive_s, drive_i) = replicator_drives(theta, params, n);
        let t = k as f64 * h;
        if !drive_i.is_finite() || drive_s.iter().any(|g| !g.is_finite()) {
            return Err(DynamicsError::NonFinite { step: k, time: t });
        }
        let mut overshoot = 0.0f64;
        for i in 0..n {
            state.y[i] += h * rate.y[i];
            overshoot = overshoot.max(shares_s[i].step(h * drive_s[i]));
            overshoot = overshoot.max(shares_i[i].step(h * drive_i));
            state.z_s[i] = shares_s[i].value();
            state.z_i[i] = shares_i[i].value();
        }
        if state.components().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite { step: k, time: t });
        }
        traj.max_clamp = traj.max_clamp.max(overshoot);
        if opts.clamp {
            let c = clamp_unit(&mut state.y);
            traj.max_clamp = traj.max_clamp.max(c);
        }
        let mut stop = false;
        if k.is_multiple_of(per_unit) {
            let now: Vec<f64> = state.components().copied().collect();
            if traj.converged_at.is_none() && max_abs_diff(&now, &snapshot) < CONVERGENCE_THRESHOLD
            {
                traj.converged_at = Some(t);
                stop = opts.stop_when_converged;
            }
            snapshot = now;
        }
        if k.is_multiple_of(opts.record_every) || k == steps || stop {
            record(&mut traj, t, &state)?;
        }
        if stop {
            break;
        }
    }
    report_clamp("coupled", traj.max_clamp);
    Ok(traj)
}

/// Outcome of solving the stationary-Θ identity for a fixed strategy profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StationaryTheta {
    /// Only the disease-free solution exists.
    Zero,
    /// A positive root together with the per-degree infected fractions.
    Positive { theta: f64, y: Vec<f64> },
}

impl StationaryTheta {
    pub fn theta(&self) -> f64 {
        match self {
            StationaryTheta::Zero => 0.0,
            StationaryTheta::Positive { theta, .. } => *theta,
        }
    }
}

/// Per-degree coefficients of the stationary-Θ identity:
/// `transmission_d` is the infected-side transmission probability, `exposure_d`
/// the susceptible-side exposure multiplier.
#[derive(Debug, Clone)]
pub(crate) struct FixedPointTerms<'a> {
    pub neighbor: &'a [f64],
    pub transmission: Vec<f64>,
    pub exposure: Vec<f64>,
    pub gamma: f64,
}

impl FixedPointTerms<'_> {
    /// `sum_d nb_d * b_d * w_d * d / (γ + w_d * d * Θ)`. Strictly decreasing in Θ.
    pub fn sum(&self, theta: f64) -> f64 {
        (0..self.neighbor.len())
            .map(|i| {
                let wd = self.exposure[i] * (i + 1) as f64;
                self.neighbor[i] * self.transmission[i] * wd / (self.gamma + wd * theta)
            })
            .sum()
    }

    /// The sum at Θ = 0, i.e. the threshold quantity of the identity.
    pub fn at_zero(&self) -> f64 {
        self.sum(0.0)
    }

    /// Positive root of `sum(Θ) = 1`, when it exists.
    pub fn positive_root(&self) -> Option<f64> {
        if self.at_zero() <= 1.0 {
            return None;
        }
        Some(bisect_decreasing(0.0, 1.0, |t| self.sum(t) - 1.0))
    }

    /// Stationary infected fractions for a given Θ.
    pub fn infected(&self, theta: f64) -> Vec<f64> {
        stationary_infection(&self.exposure, self.gamma, theta)
    }
}

/// `y^d = w_d d Θ / (γ + w_d d Θ)`.
pub fn stationary_infection(exposure: &[f64], gamma: f64, theta: f64) -> Vec<f64> {
    exposure
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let force = w * (i + 1) as f64 * theta;
            force / (gamma + force)
        })
        .collect()
}

pub(crate) fn profile_terms<'a>(
    z_s: &[f64],
    z_i: &[f64],
    params: &ModelParams,
    dist: &'a DegreeDistribution,
) -> FixedPointTerms<'a> {
    FixedPointTerms {
        neighbor: dist.neighbor_weights(),
        transmission: z_i
            .iter()
            .enumerate()
            .map(|(i, z)| params.beta_u[i] * z + params.beta_p[i] * (1.0 - z))
            .collect(),
        exposure: z_s.iter().map(|&z| exposure(z, params.alpha)).collect(),
        gamma: params.gamma,
    }
}

/// The quantity that must exceed 1 for a positive stationary Θ to exist under
/// the profile `(z_s, z_i)`.
pub fn profile_reproduction(
    z_s: &[f64],
    z_i: &[f64],
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> f64 {
    profile_terms(z_s, z_i, params, dist).at_zero()
}

/// Left side of the identity `sum(Θ) = 1` for a strategy profile; exposed for
/// consistency checks.
pub fn profile_fixed_point_sum(
    theta: f64,
    z_s: &[f64],
    z_i: &[f64],
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> f64 {
    profile_terms(z_s, z_i, params, dist).sum(theta)
}

/// Stationary Θ of the epidemic under a frozen strategy profile.
pub fn stationary_theta_for_profile(
    z_s: &[f64],
    z_i: &[f64],
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> Result<StationaryTheta, ModelError> {
    dist.check_len(z_s.len())?;
    dist.check_len(z_i.len())?;
    let terms = profile_terms(z_s, z_i, params, dist);
    Ok(match terms.positive_root() {
        None => StationaryTheta::Zero,
        Some(theta) => StationaryTheta::Positive {
            y: terms.infected(theta),
            theta,
        },
    })
}

//! Per-node SIS dynamics (N-intertwined mean-field) on a directed weighted
//! graph, and the degree-level graph whose NIMFA dynamics coincide with a
//! fixed regime of the reduced system.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{clamp_unit, report_clamp, DynamicsError, Integration};
use crate::equilibrium::regime_exposure;
use crate::model::{DegreeDistribution, ModelParams};
use crate::output::{csv_writer, fmt_sig};
use crate::reduced::integrate_regime;

/// Relative gap between the Collatz-Wielandt bounds at which power iteration stops.
pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 100_000;

#[derive(Debug, Error)]
pub enum NimfaError {
    #[error("adjacency has {got} entries, expected {n}x{n}")]
    Dimension { n: usize, got: usize },
    #[error("weight a[{i}][{j}] = {value} must be finite and non-negative")]
    BadWeight { i: usize, j: usize, value: f64 },
    #[error("recovery rate of node {i} is {value}, must be positive")]
    BadRecovery { i: usize, value: f64 },
    #[error("edge ({i}, {j}) outside a graph of {n} nodes")]
    EdgeOutOfRange { i: usize, j: usize, n: usize },
    #[error(
        "power iteration did not converge after {iterations} iterations (bounds {lower}, {upper})"
    )]
    NotConverged {
        iterations: usize,
        lower: f64,
        upper: f64,
    },
    #[error("regime d* = {d_star} outside 1..={max}")]
    BadRegime { d_star: usize, max: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `a_ij` is the rate at which node `j` infects node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWeightedGraph {
    n: usize,
    adjacency: Vec<f64>,
    recovery: Vec<f64>,
}

impl DirectedWeightedGraph {
    /// `adjacency` is row-major `n x n`.
    pub fn new(adjacency: Vec<f64>, recovery: Vec<f64>) -> Result<Self, NimfaError> {
        let n = recovery.len();
        if adjacency.len() != n * n {
            return Err(NimfaError::Dimension {
                n,
                got: adjacency.len(),
            });
        }
        for (k, &value) in adjacency.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(NimfaError::BadWeight {
                    i: k / n,
                    j: k % n,
                    value,
                });
            }
        }
        for (i, &value) in recovery.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(NimfaError::BadRecovery { i, value });
            }
        }
        Ok(Self {
            n,
            adjacency,
            recovery,
        })
    }

    pub fn from_edges(
        edges: &[(usize, usize, f64)],
        recovery: Vec<f64>,
    ) -> Result<Self, NimfaError> {
        let n = recovery.len();
        let mut adjacency = vec![0.0; n * n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(NimfaError::EdgeOutOfRange { i, j, n });
            }
            adjacency[i * n + j] += w;
        }
        Self::new(adjacency, recovery)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.adjacency[i * self.n..(i + 1) * self.n]
    }

    pub fn recovery(&self) -> &[f64] {
        &self.recovery
    }

    /// Every node reaches every other along positive-weight edges.
    pub fn is_strongly_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        self.reaches_all(|i, j| self.weight(i, j)) && self.reaches_all(|i, j| self.weight(j, i))
    }

    fn reaches_all(&self, w: impl Fn(usize, usize) -> f64) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && w(i, j) > 0.0 {
                    *s = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Writes positive-weight edges as `i,j,weight` and the rates as `i,recovery`.
    pub fn write_csv<W1: Write, W2: Write>(
        &self,
        edges: W1,
        recovery: W2,
    ) -> Result<(), NimfaError> {
        let mut wtr = csv_writer(edges);
        wtr.write_record(["i", "j", "weight"])?;
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.weight(i, j);
                if w > 0.0 {
                    wtr.write_record([i.to_string(), j.to_string(), fmt_sig(w)])?;
                }
            }
        }
        wtr.flush().map_err(csv::Error::from)?;
        let mut wtr = csv_writer(recovery);
        wtr.write_record(["i", "recovery"])?;
        for (i, r) in self.recovery.iter().enumerate() {
            wtr.write_record([i.to_string(), fmt_sig(*r)])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); the node count comes from the recovery file.
    pub fn read_csv<R1: Read, R2: Read>(edges: R1, recovery: R2) -> Result<Self, NimfaError> {
        #[derive(Deserialize)]
        struct Edge {
            i: usize,
            j: usize,
            weight: f64,
        }
        #[derive(Deserialize)]
        struct Rate {
            i: usize,
            recovery: f64,
        }
        let mut rates: Vec<Rate> = csv::Reader::from_reader(recovery)
            .deserialize()
            .collect::<Result<_, _>>()?;
        rates.sort_by_key(|r| r.i);
        let n = rates.len();
        if let Some((k, r)) = rates.iter().enumerate().find(|(k, r)| r.i != *k) {
            return Err(NimfaError::EdgeOutOfRange { i: r.i, j: k, n });
        }
        let edges: Vec<Edge> = csv::Reader::from_reader(edges)
            .deserialize()
            .collect::<Result<_, _>>()?;
        let edges: Vec<_> = edges.into_iter().map(|e| (e.i, e.j, e.weight)).collect();
        Self::from_edges(&edges, rates.into_iter().map(|r| r.recovery).collect())
    }
}

/// `D⁻¹Â = v1 v2ᵀ` for the degree-level graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankOneFactors {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl RankOneFactors {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.v1[i] * self.v2[j]
    }
}

/// Degree-level graph for regime `d*`:
/// `Â[d][d'] = w_d (d / d_avg) d' m_{d'} β_{d'}` with `w_d = 1` below `d*`, `α` otherwise.
pub fn build_abar(
    d_star: usize,
    params: &ModelParams,
    dist: &DegreeDistribution,
) -> Result<(DirectedWeightedGraph, RankOneFactors), NimfaError> {
    let n = dist.d_max();
    if d_star == 0 || d_star > n + 1 {
        return Err(NimfaError::BadRegime { d_star, max: n + 1 });
    }
    let w = regime_exposure(d_star, params.alpha, n);
    let row: Vec<f64> = (0..n)
        .map(|i| w[i] * (i + 1) as f64 / dist.avg_degree())
        .collect();
    let col: Vec<f64> = (0..n)
        .map(|j| (j + 1) as f64 * dist.masses()[j] * params.beta_p[j])
        .collect();
    let adjacency = row
        .iter()
        .flat_map(|r| col.iter().map(move |c| r * c))
        .collect();
    let graph = DirectedWeightedGraph::new(adjacency, vec![params.gamma; n])?;
    let factors = RankOneFactors {
        v1: row.iter().map(|r| r / params.gamma).collect(),
        v2: col,
    };
    Ok((graph, factors))
}

/// `v1ᵀ v2`, the only nonzero eigenvalue of a rank-one matrix.
pub fn rank_one_radius(factors: &RankOneFactors) -> f64 {
    factors.v1.iter().zip(&factors.v2).map(|(a, b)| a * b).sum()
}

/// `ρ(D⁻¹A)` by power iteration on `D⁻¹A + I`.
///
/// The shift keeps the iterate strictly positive, so the Collatz-Wielandt
/// ratios bracket the Perron root at every step.
pub fn spectral_radius(graph: &DirectedWeightedGraph) -> Result<f64, NimfaError> {
    let n = graph.n();
    if n == 0 {
        return Ok(0.0);
    }
    let mut x = vec![1.0; n];
    let mut next = vec![0.0; n];
    let (mut lower, mut upper) = (0.0, f64::INFINITY);
    for _ in 0..POWER_MAX_ITER {
        for (i, out) in next.iter_mut().enumerate() {
            let ax: f64 = graph.row(i).iter().zip(&x).map(|(a, x)| a * x).sum();
            *out = ax / graph.recovery()[i] + x[i];
        }
        lower = f64::INFINITY;
        upper = 0.0;
        for (nx, x) in next.iter().zip(&x) {
            let r = nx / x;
            lower = f64::min(lower, r);
            upper = f64::max(upper, r);
        }
        if upper - lower <= POWER_TOLERANCE * upper {
            return Ok(0.5 * (lower + upper) - 1.0);
        }
        let scale = next.iter().copied().fold(0.0, f64::max);
        for (x, nx) in x.iter_mut().zip(&next) {
            *x = nx / scale;
        }
    }
    Err(NimfaError::NotConverged {
        iterations: POWER_MAX_ITER,
        lower: lower - 1.0,
        upper: upper - 1.0,
    })
}

/// `ṗ_i = -δ_i p_i + (1 - p_i) Σ_j a_ij p_j`.
pub fn nimfa_rhs(p: &[f64], graph: &DirectedWeightedGraph) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(i, &pi)| {
            let pressure: f64 = graph.row(i).iter().zip(p).map(|(a, pj)| a * pj).sum();
            -graph.recovery()[i] * pi + (1.0 - pi) * pressure
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NimfaTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub max_clamp: f64,
}

impl NimfaTrajectory {
    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), NimfaError> {
        let n = self.states.first().map_or(0, Vec::len);
        let mut wtr = csv_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("p_{i}")));
        wtr.write_record(&header)?;
        for (t, p) in self.times.iter().zip(&self.states) {
            let row = std::iter::once(fmt_sig(*t)).chain(p.iter().map(|v| fmt_sig(*v)));
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Euler integration of the NIMFA system with `[0,1]` clamping.
pub fn integrate_nimfa(
    p0: &[f64],
    graph: &DirectedWeightedGraph,
    opts: &Integration,
) -> Result<NimfaTrajectory, NimfaError> {
    if p0.len() != graph.n() {
        return Err(NimfaError::Dimension {
            n: graph.n(),
            got: p0.len(),
        });
    }
    let steps = opts.check()?;
    let h = opts.step;
    let mut traj = NimfaTrajectory::default();
    let mut p = p0.to_vec();
    traj.times.push(0.0);
    traj.states.push(p.clone());
    for k in 1..=steps {
        let rate = nimfa_rhs(&p, graph);
        for (pi, r) in p.iter_mut().zip(&rate) {
            *pi += h * r;
        }
        let t = k as f64 * h;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { step: k, time: t }.into());
        }
        if opts.clamp {
            traj.max_clamp = traj.max_clamp.max(clamp_unit(&mut p));
        }
        if k.is_multiple_of(opts.record_every) || k == steps {
            traj.times.push(t);
            traj.states.push(p.clone());
        }
    }
    report_clamp("nimfa", traj.max_clamp);
    Ok(traj)
}

/// Sup-norm gap between NIMFA on `Â(d*)` and the fixed-regime reduced
/// integrator, both stepped with the same `h` and compared at every step.
pub fn equivalence_check(
    d_star: usize,
    params: &ModelParams,
    dist: &DegreeDistribution,
    p0: &[f64],
    step: f64,
    horizon: f64,
) -> Result<f64, NimfaError> {
    let opts = Integration::new(step, horizon);
    let (graph, _) = build_abar(d_star, params, dist)?;
    let nimfa = integrate_nimfa(p0, &graph, &opts)?;
    let reduced = integrate_regime(p0, d_star, params, dist, &opts)?;
    let gap = nimfa
        .states
        .iter()
        .zip(&reduced.states)
        .flat_map(|(p, s)| p.iter().zip(&s.y).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(gap)
}

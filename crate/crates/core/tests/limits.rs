//! The coupled system approaches the switched one as strategy revision speeds up.

use sisgame::dynamics::{integrate_coupled, Integration};
use sisgame::equilibrium::find_equilibrium;
use sisgame::model::{baseline_distribution, baseline_params, SocialState};
use sisgame::reduced::integrate_switched;

// Before Θ first crosses a threshold. Past that point a share pinned near a boundary
// leaves it only after an O(1) delay that survives ε → 0, so the gap plateaus.
const HORIZON: f64 = 1.0;

fn coupled_step(eps: f64) -> f64 {
    f64::min(0.01, eps / 100.0)
}

#[test]
fn coupled_gap_shrinks_with_epsilon() {
    let dist = baseline_distribution();
    for c_p in [10.0, 8.0] {
        let reference = integrate_switched(
            &[0.1; 4],
            &baseline_params(c_p),
            &dist,
            &Integration::new(1e-5, HORIZON).record_every(usize::MAX),
        )
        .unwrap()
        .final_theta()
        .unwrap();
        let gaps: Vec<f64> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&eps| {
                let p = baseline_params(c_p).with_epsilon(eps);
                let traj = integrate_coupled(
                    &SocialState::uniform(4, 0.1, 0.5, 0.5),
                    &p,
                    &dist,
                    &Integration::new(coupled_step(eps), HORIZON).record_every(usize::MAX),
                )
                .unwrap();
                (traj.final_theta().unwrap() - reference).abs()
            })
            .collect();
        assert!(
            gaps[1] < gaps[0] && gaps[2] < gaps[1],
            "c_P = {c_p}: {gaps:?}"
        );
    }
}

// Shares driven to within rounding of a boundary must still leave it once the payoff flips.
#[test]
fn fast_revision_reaches_the_equilibrium() {
    let dist = baseline_distribution();
    let eps = 0.01;
    for c_p in [10.0, 8.0] {
        let expected = find_equilibrium(&baseline_params(c_p), &dist)
            .unwrap()
            .theta_star;
        let traj = integrate_coupled(
            &SocialState::uniform(4, 0.1, 0.5, 0.5),
            &baseline_params(c_p).with_epsilon(eps),
            &dist,
            &Integration::new(coupled_step(eps), 60.0).record_every(usize::MAX),
        )
        .unwrap();
        let theta = traj.final_theta().unwrap();
        assert!(
            (theta - expected).abs() < 1e-3,
            "c_P = {c_p}: {theta} vs {expected}"
        );
        assert_eq!(traj.max_clamp, 0.0);
    }
}

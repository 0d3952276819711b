mod common;

use common::*;
use rand::Rng;
use radpair::evolve::propagate;
use radpair::trajectory::{run_ensemble, TrajectoryConfig, TrajectoryEnsemble};
use radpair::{Approach, ComplexMatrix, RateConstants, SpinSystem, Superoperator};

fn ensemble(
    sys: &SpinSystem,
    rates: RateConstants,
    rho0: &ComplexMatrix,
    dt: f64,
    t_max: f64,
    n: usize,
    seed: u64,
    scheme: Approach,
) -> TrajectoryEnsemble {
    let cfg = TrajectoryConfig::new(dt, t_max, n, seed, scheme);
    run_ensemble(sys, rates, rho0, &cfg).unwrap()
}

/// Horizon at which 1% of the ensemble is still expected to survive, capped at `cap`.
/// Beyond it counts are a handful and the normal-theory band is meaningless.
fn sampled_window(s: &Superoperator, rho0: &ComplexMatrix, cap: f64) -> f64 {
    let grid = linspace(0.0, cap, 501);
    let det = propagate(s, rho0, &grid).unwrap();
    let i = det.pop_s.iter().zip(&det.pop_t).position(|(a, b)| a + b < 0.01);
    i.map_or(cap, |i| grid[i].max(grid[1]))
}

#[test]
fn ensembles_track_the_master_equations() {
    let mut r = rng(2024);
    for set in 0..10 {
        let omega = r.random_range(0.5..2.0);
        let rates = RateConstants::new(r.random_range(0.0..5.0), r.random_range(0.0..5.0)).unwrap();
        let sys = SpinSystem::minimal_two_level(omega).unwrap();
        let rho0 = sys.singlet_state().unwrap();
        let dt = TrajectoryConfig::default_dt(&sys, rates).unwrap().unwrap();
        for scheme in Approach::BOTH {
            let s = Superoperator::for_approach(scheme, &sys, rates).unwrap();
            let t_max = sampled_window(&s, &rho0, 5.0);
            let ens = ensemble(&sys, rates, &rho0, dt, t_max, 20_000, 90 + set, scheme);
            let det = propagate(&s, &rho0, &ens.times).unwrap();
            let frac = ens.agreement_fraction(&det.pop_s, &det.pop_t, 3.0);
            assert!(frac >= 0.95, "set {set} {scheme}: {frac}");
            let ys = (ens.yield_s_final() - det.yield_s.last().unwrap()).abs();
            let yt = (ens.yield_t_final() - det.yield_t.last().unwrap()).abs();
            assert!(ys <= 3.0 * ens.yield_s_stderr().unwrap() + 1e-12, "set {set} {scheme} yield_s");
            assert!(yt <= 3.0 * ens.yield_t_stderr().unwrap() + 1e-12, "set {set} {scheme} yield_t");
        }
    }
}

#[test]
fn halving_dt_at_the_bound_moves_estimates_less_than_one_stderr() {
    for (omega, k_s, k_t) in [(1.0, 0.0, 100.0), (0.5, 1.0, 0.0), (1.5, 3.0, 1.0)] {
        let sys = SpinSystem::minimal_two_level(omega).unwrap();
        let rates = RateConstants::new(k_s, k_t).unwrap();
        let rho0 = sys.singlet_state().unwrap();
        let bound = TrajectoryConfig::max_stable_dt(&sys, rates).unwrap().unwrap();
        let t_max = if k_t > 10.0 { 20.0 } else { 5.0 };
        for scheme in Approach::BOTH {
            let a = ensemble(&sys, rates, &rho0, bound, t_max, 20_000, 5, scheme);
            let b = ensemble(&sys, rates, &rho0, bound / 2.0, t_max, 20_000, 5, scheme);
            assert_eq!(a.times.len(), b.times.len());
            for i in 0..a.times.len() {
                let se = a.pop_s_stderr[i].unwrap();
                let d = (a.pop_s_est[i] - b.pop_s_est[i]).abs();
                assert!(d <= se + 1e-12, "{scheme} omega {omega} t {}: {d} vs {se}", a.times[i]);
            }
        }
    }
}

#[test]
fn singlet_decay_without_mixing() {
    let sys = SpinSystem::minimal_two_level(0.0).unwrap();
    let rates = RateConstants::new(1.0, 0.0).unwrap();
    let rho0 = sys.singlet_state().unwrap();
    for scheme in Approach::BOTH {
        let ens = ensemble(&sys, rates, &rho0, 0.001, 4.0, 20_000, 11, scheme);
        let n = ens.n_traj as f64;
        for (t, s) in ens.times.iter().zip(&ens.surviving_fraction) {
            let p = (-t).exp();
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((s - p).abs() <= 3.0 * se + 1e-12, "{scheme} t {t}");
        }
        assert_eq!(ens.triplet_reactions, 0);
    }
}

#[test]
fn zeno_case_tracks_deterministic_curve() {
    let sys = SpinSystem::minimal_two_level(1.0).unwrap();
    let rates = RateConstants::new(0.0, 100.0).unwrap();
    let rho0 = sys.singlet_state().unwrap();
    let dt = TrajectoryConfig::default_dt(&sys, rates).unwrap().unwrap();
    let ens = ensemble(&sys, rates, &rho0, dt, 40.0, 20_000, 17, Approach::Measurement);
    let s = Superoperator::for_approach(Approach::Measurement, &sys, rates).unwrap();
    let det = propagate(&s, &rho0, &ens.times).unwrap();
    assert!(ens.agreement_fraction(&det.pop_s, &det.pop_t, 3.0) >= 0.95);
    // ln pop_s falls at about 2ω²/k_T
    let last = ens.times.len() - 1;
    let rate = -(ens.pop_s_est[last] / ens.pop_s_est[last / 2]).ln() / (ens.times[last] - ens.times[last / 2]);
    assert!((rate / 0.02 - 1.0).abs() < 0.1, "{rate}");
}

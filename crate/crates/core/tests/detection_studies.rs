//! Mixture-model invariants and simulation-calibrated checks of the
//! detection analysis.

use proptest::prelude::*;
use rand_distr::{Distribution, Poisson};
use spt_core::detection::{
    decompose, mixture_from_params, optimal_threshold, poissonness_test, threshold_fidelity, threshold_scan_limit,
    CountHistogram, DispersionOptions,
};
use spt_core::models::{GateMode, TransistorParams};
use spt_core::montecarlo::{simulate_ensemble, SimConfig};
use spt_core::rng;

/// Stored excitations with Poisson mean `n_stored`, detected counts with
/// ungated mean `mu0`, no fly-away or saturation.
fn detection_config(n_stored: f64, od_st: f64, mu0: f64, seed: u64) -> SimConfig {
    let params = TransistorParams { od_sp: 0.45, od_st, cap: 3, a_ge: 0.15, eta_det: 0.31 };
    let n_gate_in = 0.75;
    SimConfig {
        n_gate_in,
        gate_mode: GateMode::Stored,
        p_store: n_stored / ((1.0 - params.a_ge) * n_gate_in),
        params,
        sat: None,
        source_rate: mu0 / (90.0 * params.eta_det),
        t_int: 90.0,
        retention_tau: None,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_sum_to_one_and_means_fall(n in 0.0f64..5.0, cap in 1u32..6, od in 0.0f64..5.0, mu0 in 0.1f64..60.0) {
        let m = mixture_from_params(n, cap, od, mu0).unwrap();
        let sum: f64 = m.components().iter().map(|c| c.weight).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for w in m.components().windows(2) {
            prop_assert!(w[0].mean >= w[1].mean);
        }
    }

    #[test]
    fn decomposition_sums_to_model_totals(
        n in 0.01f64..3.0,
        od in 0.0f64..4.0,
        mu0 in 0.5f64..40.0,
        counts in prop::collection::vec(0u64..80, 1..300),
    ) {
        let m = mixture_from_params(n, 3, od, mu0).unwrap();
        let h: CountHistogram = counts.into_iter().collect();
        let d = decompose(&h, &m).unwrap();
        let total = h.total() as f64;
        let gated: f64 = d.rows.iter().map(|r| r.model_gated).sum();
        let ungated: f64 = d.rows.iter().map(|r| r.model_ungated).sum();
        prop_assert!((gated / (total * m.gated_weight()) - 1.0).abs() < 1e-9);
        prop_assert!((ungated / (total * m.ungated_weight()) - 1.0).abs() < 1e-9);
        let observed: u64 = d.rows.iter().map(|r| r.observed).sum();
        prop_assert_eq!(observed, h.total());
    }

    #[test]
    fn optimal_threshold_is_exhaustively_optimal(n in 0.01f64..3.0, od in 0.01f64..4.0, mu0 in 0.5f64..40.0) {
        let m = mixture_from_params(n, 3, od, mu0).unwrap();
        let best = optimal_threshold(&m).unwrap();
        prop_assert!(best.fidelity >= 0.0 && best.fidelity <= 1.0);
        for tau in 0..=threshold_scan_limit(&m) {
            let r = threshold_fidelity(&m, tau).unwrap();
            prop_assert!(r.fidelity <= best.fidelity);
            prop_assert!(r.fidelity < best.fidelity || tau >= best.tau);
        }
    }

    #[test]
    fn more_attenuation_never_hurts(n in 0.05f64..3.0, od in 0.0f64..4.0, dod in 0.0f64..2.0, mu0 in 1.0f64..40.0) {
        let f = |od: f64| optimal_threshold(&mixture_from_params(n, 3, od, mu0).unwrap()).unwrap().fidelity;
        prop_assert!(f(od + dod) >= f(od) - 1e-12);
    }
}

#[test]
fn labeled_simulation_matches_decomposed_masses() {
    let (n_stored, od, mu0) = (0.61, 0.94, 20.0);
    let model = mixture_from_params(n_stored, 3, od, mu0).unwrap();
    for seed in 0..5 {
        let e = simulate_ensemble(&detection_config(n_stored, od, mu0, seed), 5000).unwrap();
        let d = decompose(&e.histogram, &model).unwrap();
        let runs = e.n_runs as f64;
        let p = model.gated_weight();
        let sd = (runs * p * (1.0 - p)).sqrt();
        assert!((d.gated_mass() - e.gated_runs() as f64).abs() < 3.0 * sd);
        // per-composition check against the simulator's labels
        for (k, c) in model.components().iter().enumerate() {
            let truth = e.by_stored[k].total() as f64;
            let sd = (runs * c.weight * (1.0 - c.weight)).sqrt().max(1.0);
            assert!((runs * c.weight - truth).abs() < 3.0 * sd, "k={k}");
        }
    }
}

#[test]
fn gated_mass_fraction_at_measured_storage() {
    let model = mixture_from_params(0.61, 3, 0.94, 20.0).unwrap();
    let h: CountHistogram = (0..250).map(|i| (i % 25) as u64).collect();
    let d = decompose(&h, &model).unwrap();
    let fraction = d.gated_mass() / 250.0;
    assert!((fraction - (1.0 - (-0.61f64).exp())).abs() < 1e-9);
    assert!((fraction - 0.457).abs() < 1e-3);
}

#[test]
fn simulated_histograms_fit_the_mixture() {
    let (n_stored, od, mu0) = (0.61, 0.94, 20.0);
    let model = mixture_from_params(n_stored, 3, od, mu0).unwrap();
    let seeds = 200;
    let good = (0..seeds)
        .filter(|&s| {
            let e = simulate_ensemble(&detection_config(n_stored, od, mu0, 1000 + s), 1000).unwrap();
            decompose(&e.histogram, &model).unwrap().p_value > 0.01
        })
        .count();
    assert!(good as f64 >= 0.95 * seeds as f64, "{good} of {seeds}");
}

#[test]
fn poisson_samples_pass_dispersion_test_at_nominal_rate() {
    let trials = 200;
    let law = Poisson::new(20.0).unwrap();
    let passes = (0..trials)
        .filter(|&t| {
            let mut r = rng::stream(7, 0xfeed, t);
            let h: CountHistogram = (0..10_000).map(|_| law.sample(&mut r) as u64).collect();
            poissonness_test(&h, DispersionOptions { n_null: 199, seed: t }).unwrap().passes
        })
        .count();
    let rate = passes as f64 / trials as f64;
    // 95 % nominal; 3 binomial standard errors at 200 trials is 0.046
    assert!((rate - 0.95).abs() < 0.046, "pass rate {rate}");
}

#[test]
fn gated_histograms_fail_dispersion_test() {
    for mu0 in [20.0, 30.0, 40.0] {
        let seeds = 40;
        let fails = (0..seeds)
            .filter(|&s| {
                let e = simulate_ensemble(&detection_config(0.61, 0.94, mu0, s), 250).unwrap();
                !poissonness_test(&e.histogram, DispersionOptions { n_null: 199, seed: s }).unwrap().passes
            })
            .count();
        assert!(2 * fails > seeds as usize, "mu0={mu0}: {fails} of {seeds}");
    }
}

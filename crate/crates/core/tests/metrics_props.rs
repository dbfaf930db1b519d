use proptest::prelude::*;
use qmem_core::metrics::{
    classical_threshold, compute_metrics, fidelity, mean_input_photon_number, mu1, snr, end_to_end_efficiency, Snr,
    WindowCounts,
};
use qmem_core::{Calibration, Time};
use statrs::distribution::{Discrete, Poisson};

fn counts(n_mon: u64, n_sig: u64, n_noi: u64) -> WindowCounts {
    WindowCounts { n_mon, n_sig, n_noi, f_rep_hz: 31_000.0, t_int: Time::secs(20) }
}

/// Best fidelity over every "accept all strata above K, part of K" policy,
/// with the Poisson weights taken from statrs rather than the crate.
fn brute_force_threshold(mu: f64, eta: f64) -> f64 {
    let pois = Poisson::new(mu).unwrap();
    let n_top = 400usize;
    let p: Vec<f64> = (0..=n_top).map(|n| pois.pmf(n as u64)).collect();
    let f = |n: usize| (n as f64 + 1.0) / (n as f64 + 2.0);
    let mut best = f64::NEG_INFINITY;
    for k in 0..=n_top {
        let above: f64 = p[k + 1..].iter().sum();
        if above > eta {
            continue;
        }
        let partial = eta - above;
        if partial > p[k] + 1e-15 {
            continue;
        }
        let weighted: f64 = (k + 1..=n_top).map(|n| p[n] * f(n)).sum::<f64>() + partial * f(k);
        best = best.max(weighted / eta);
    }
    best
}

#[test]
fn greedy_matches_brute_force_on_random_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(314);
    for _ in 0..100 {
        let mu: f64 = rng.random_range(0.01..5.0);
        let eta: f64 = rng.random_range(1e-3..=1.0);
        let greedy = classical_threshold(mu, eta, None).unwrap().f_class;
        let oracle = brute_force_threshold(mu, eta);
        assert!((greedy - oracle).abs() < 1e-10, "mu {mu} eta {eta}: {greedy} vs {oracle}");
    }
}

#[test]
fn worked_threshold_example() {
    // accept all N ≥ 4, and the remainder of the budget from N = 3
    let e = (-1.0f64).exp();
    let p = |n: i32| e / (1..=n).map(f64::from).product::<f64>();
    let above: f64 = 1.0 - (0..=3).map(p).sum::<f64>();
    let weighted: f64 = (4..60).map(|n| p(n) * (n as f64 + 1.0) / (n as f64 + 2.0)).sum::<f64>();
    let q3 = (0.052 - above) / p(3);
    assert!((above - 0.0190).abs() < 1e-4);
    assert!((q3 - 0.538).abs() < 1e-3);
    let expected = (weighted + (0.052 - above) * 0.8) / 0.052;
    let t = classical_threshold(1.0, 0.052, None).unwrap();
    assert!((t.f_class - expected).abs() < 1e-12, "{} vs {expected}", t.f_class);
    // exact value 0.81408; the often-quoted 0.813 comes from rounded stratum masses
    assert!((t.f_class - 0.81408).abs() < 1e-5);
    assert!((t.f_class - 0.813).abs() < 2e-3);
    let boundary = &t.strata[3];
    // `above` is formed as 1 − Σ, so it carries ~1e-16 absolute cancellation error
    assert!((boundary.accepted / boundary.p_n - q3).abs() < 1e-10);
}

#[test]
fn threshold_limits() {
    let mu = 1e-7;
    let single = classical_threshold(mu, -(-mu).exp_m1(), None).unwrap().f_class;
    assert!((single - 2.0 / 3.0).abs() < 1e-6, "{single}");
    let vacuum = classical_threshold(mu, 1.0, None).unwrap().f_class;
    assert!((vacuum - 0.5).abs() < 1e-6, "{vacuum}");
    let bright = classical_threshold(400.0, 1.0, None).unwrap().f_class;
    assert!(bright > 0.997 && bright < 1.0);
}

#[test]
fn boundary_is_linear_between_integer_acceptance_solutions() {
    let mu = 1.3;
    let t = classical_threshold(mu, 0.5, None).unwrap();
    let p: Vec<f64> = t.strata.iter().map(|s| s.p_n).collect();
    for k in 1..6 {
        // η_hi accepts all N ≥ k, η_lo all N ≥ k + 1
        let eta_lo: f64 = p[k + 1..].iter().sum();
        let eta_hi = eta_lo + p[k];
        let w = |eta: f64| eta * classical_threshold(mu, eta, None).unwrap().f_class;
        let (w_lo, w_hi) = (w(eta_lo), w(eta_hi));
        for s in [0.1, 0.37, 0.5, 0.93] {
            let eta = eta_lo + s * (eta_hi - eta_lo);
            let interp = (1.0 - s) * w_lo + s * w_hi;
            assert!((w(eta) - interp).abs() < 1e-13, "k {k} s {s}");
        }
    }
}

#[test]
fn fidelity_at_measured_noise_level() {
    assert!((fidelity(1.0, 0.023).unwrap() - 1.023 / 1.046).abs() < 1e-15);
    assert_eq!(fidelity(1.0, 0.0).unwrap(), 1.0);
    assert!((fidelity(1e-12, 0.023).unwrap() - 0.5).abs() < 1e-9);
    assert!(fidelity(0.0, 0.0).is_err());
}

proptest! {
    #[test]
    fn snr_mu1_identity(n_mon in 1u64..1_000_000, noise in 1u64..100_000, excess in 1u64..1_000_000) {
        let cal = Calibration::default();
        let c = counts(n_mon, noise + excess, noise);
        let mu = mean_input_photon_number(&c, &cal).unwrap();
        let eta = end_to_end_efficiency(&c, &mu, &cal).unwrap().estimate;
        let m1 = mu1(&c, &eta).unwrap();
        let Snr::Finite(s) = snr(&c) else { panic!("finite noise") };
        let lhs = s.value * m1.value;
        let rhs = mu.value * cal.eta_apd_sig;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn fidelity_monotone(mu in 1e-6f64..10.0, m1 in 1e-6f64..10.0, d in 1e-6f64..1.0) {
        let f = fidelity(mu, m1).unwrap();
        prop_assert!(f > 0.5 && f < 1.0);
        prop_assert!(fidelity(mu + d, m1).unwrap() > f);
        prop_assert!(fidelity(mu, m1 + d).unwrap() < f);
    }

    #[test]
    fn threshold_bounds_and_monotonicity(mu in 0.01f64..8.0, eta in 1e-3f64..1.0, dmu in 0.0f64..2.0, deta in 0.0f64..0.5) {
        let f = classical_threshold(mu, eta, None).unwrap().f_class;
        prop_assert!((0.5..1.0).contains(&f));
        let f_mu = classical_threshold(mu + dmu, eta, None).unwrap().f_class;
        prop_assert!(f_mu >= f - 1e-12, "mu {mu}->{}: {f} -> {f_mu}", mu + dmu);
        let eta2 = (eta + deta).min(1.0);
        let f_eta = classical_threshold(mu, eta2, None).unwrap().f_class;
        prop_assert!(f_eta <= f + 1e-12, "eta {eta}->{eta2}: {f} -> {f_eta}");
    }

    #[test]
    fn metric_invariants_on_random_counts(n_mon in 1u64..100_000, n_sig in 0u64..100_000, n_noi in 1u64..10_000) {
        let cal = Calibration::default();
        let r = compute_metrics(&counts(n_mon, n_sig, n_noi), &cal).unwrap();
        if let (Some(e), Some(m)) = (r.eta_e2e, r.eta_mem) {
            prop_assert!((m.value - e.value / cal.eta_setup).abs() <= 1e-15 * e.value.abs().max(1e-300));
        }
        if let Some(f) = r.fidelity {
            prop_assert!((0.5..=1.0).contains(&f.value));
        }
    }
}

//! Statistical checks of the shot sampler against its configured laws.

use qmem_core::model::FWHM_PER_SIGMA;
use qmem_core::simulator::{simulate_run, ShotSampler, Source};
use qmem_core::tagstream::{fold_and_bin, read_tag_bytes, window_sum, FoldSpec, CH_SIGNAL, CH_SYNC};
use qmem_core::{ExperimentConfig, Time};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SOURCES: [Source; 5] = [Source::Monitor, Source::Leakage, Source::Retrieved, Source::Noise, Source::Dark];

fn configured_mean(s: &ShotSampler, src: Source) -> f64 {
    let m = s.means();
    match src {
        Source::Monitor => m.monitor,
        Source::Leakage => m.leakage,
        Source::Retrieved => m.retrieved,
        Source::Noise => m.noise,
        // dark clicks are drawn independently on both detectors
        Source::Dark => 2.0 * m.dark,
    }
}

#[test]
fn per_contribution_means_within_five_standard_errors() {
    let mut cfg = ExperimentConfig::table1();
    cfg.truth.dark_rate_hz = 500.0;
    let sampler = ShotSampler::new(&cfg).unwrap();
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sums = [0f64; 5];
    let mut sq = [0f64; 5];
    for _ in 0..n {
        let shot = sampler.sample(&mut rng);
        for (i, src) in SOURCES.iter().enumerate() {
            let k = shot.count(*src) as f64;
            sums[i] += k;
            sq[i] += k * k;
        }
    }
    for (i, src) in SOURCES.iter().enumerate() {
        let mean = configured_mean(&sampler, *src);
        assert!(mean > 0.0, "{src:?} has zero mean");
        let emp = sums[i] / n as f64;
        let se = (mean / n as f64).sqrt();
        assert!((emp - mean).abs() < 5.0 * se, "{src:?}: empirical {emp} vs {mean} (se {se})");
        // Poisson: variance equals mean. The dispersion index has sd ≈ sqrt(1/(n·mean) + 2/n).
        let var = sq[i] / n as f64 - emp * emp;
        let dispersion = var / emp;
        let sd = (1.0 / (n as f64 * mean) + 2.0 / n as f64).sqrt();
        assert!((dispersion - 1.0).abs() < 5.0 * sd, "{src:?}: dispersion {dispersion}");
    }
}

#[test]
fn monitor_arrival_fwhm_within_three_percent() {
    let mut cfg = ExperimentConfig::table1();
    cfg.mu_in_target = 4.0;
    let sampler = ShotSampler::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut times = Vec::new();
    while times.len() < 20_000 {
        let shot = sampler.sample(&mut rng);
        times.extend(shot.monitor_clicks.iter().filter(|c| c.source == Source::Monitor).map(|c| c.t.as_ps() as f64));
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let fwhm_ns = var.sqrt() * FWHM_PER_SIGMA / 1e3;
    assert!((fwhm_ns - 10.0).abs() / 10.0 < 0.03, "sample fwhm {fwhm_ns} ns");
    assert!(mean.abs() < 5.0 * var.sqrt() / n.sqrt(), "monitor pulse centred at t_0, got {mean} ps");
}

#[test]
fn retrieved_clicks_land_inside_the_signal_window() {
    let cfg = ExperimentConfig::table1();
    let w = cfg.windows().unwrap().signal;
    let sampler = ShotSampler::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut inside, mut total) = (0u64, 0u64);
    for _ in 0..200_000 {
        for c in sampler.sample(&mut rng).signal_clicks {
            if c.source == Source::Retrieved {
                total += 1;
                inside += w.contains(c.t) as u64;
            }
        }
    }
    // a Gaussian centred at the window midpoint keeps ±1.7 fwhm = ±4.0 sigma: mass 0.99994
    assert!(total > 2_000);
    assert!(inside as f64 / total as f64 > 0.995, "{inside}/{total}");
}

#[test]
fn zero_input_signal_window_mean_is_noise_plus_dark() {
    let mut cfg = ExperimentConfig::table1().vacuum();
    cfg.truth.dark_rate_hz = 2_000.0;
    let sampler = ShotSampler::new(&cfg).unwrap();
    let m = *sampler.means();
    assert_eq!((m.monitor, m.retrieved, m.leakage), (0.0, 0.0, 0.0));

    let w = cfg.windows().unwrap().signal;
    let shot_len = cfg.timing.shot_period.as_ps() as f64;
    let expected = m.noise + m.dark * w.len().as_ps() as f64 / shot_len;
    let (_, sig) = sampler.expected_window_means();
    assert_eq!(sig, expected);

    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut in_window = 0u64;
    for _ in 0..n {
        let shot = sampler.sample(&mut rng);
        assert!(shot.monitor_clicks.iter().all(|c| c.source == Source::Dark));
        in_window += shot.signal_clicks.iter().filter(|c| w.contains(c.t)).count() as u64;
    }
    let emp = in_window as f64 / n as f64;
    let se = (expected / n as f64).sqrt();
    assert!((emp - expected).abs() < 5.0 * se, "{emp} vs {expected}");
}

#[test]
fn folded_run_counts_match_expected_window_means() {
    let mut cfg = ExperimentConfig::table1();
    cfg.t_int = Time::secs(2);
    let bytes = simulate_run(&cfg, 5).unwrap();
    let (_, recs) = read_tag_bytes(&bytes).unwrap();
    assert_eq!(recs.iter().filter(|r| r.channel == CH_SYNC).count(), 62_000);
    let spec = FoldSpec::for_config(&cfg, CH_SIGNAL);
    let h = fold_and_bin(&recs, &spec).unwrap();
    assert_eq!(h.orphans, 0);
    assert_eq!(h.out_of_span, 0);
    let n_sig = window_sum(&h, &cfg.windows().unwrap().signal).unwrap() as f64;
    let (_, sig) = ShotSampler::new(&cfg).unwrap().expected_window_means();
    let expected = sig * 62_000.0;
    assert!((n_sig - expected).abs() < 5.0 * expected.sqrt(), "{n_sig} vs {expected}");
}

//! Monte Carlo generator for time-tag streams of the storage sequence.
//!
//! Every stage is linear loss acting on a weak coherent state, so each
//! detector's click count per shot is Poisson with the composed mean and is
//! sampled directly rather than photon by photon. Shots are independent: shot
//! `k` draws from its own ChaCha stream (`stream = k`) of the run seed, which
//! makes the output identical for any number of worker threads.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ConfigError, TagError};
use crate::metrics::WindowCounts;
use crate::model::{ExperimentConfig, NoiseProfile, Windows};
use crate::tagstream::{TagHeader, TagWriter, TimeTagRecord, CH_MONITOR, CH_SIGNAL, CH_SYNC};
use crate::time::Time;

/// Origin of a simulated click, kept for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Monitor,
    Leakage,
    Retrieved,
    Noise,
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Click {
    /// Folded time relative to `t_0`.
    pub t: Time,
    pub source: Source,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShotOutcome {
    pub monitor_clicks: Vec<Click>,
    pub signal_clicks: Vec<Click>,
}

impl ShotOutcome {
    pub fn count(&self, source: Source) -> usize {
        self.monitor_clicks.iter().chain(&self.signal_clicks).filter(|c| c.source == source).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct GaussianArrival {
    center_ps: f64,
    sigma_ps: f64,
}

impl GaussianArrival {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        let z: f64 = rng.sample(StandardNormal);
        Time((self.center_ps + self.sigma_ps * z).round() as i64)
    }

    /// Probability mass inside `[start, end)`.
    fn mass_in(&self, start: Time, end: Time) -> f64 {
        let n = Normal::new(self.center_ps, self.sigma_ps).expect("sigma > 0");
        n.cdf(end.as_ps() as f64) - n.cdf(start.as_ps() as f64)
    }
}

/// Poisson means per shot for each contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotMeans {
    pub monitor: f64,
    pub retrieved: f64,
    pub leakage: f64,
    pub noise: f64,
    /// Dark counts per detector over the whole shot.
    pub dark: f64,
}

impl ShotMeans {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        let c = &cfg.calibration;
        let s = &cfg.truth;
        let mu = cfg.mu_in_target;
        let detect_sig = c.eta_setup * c.eta_apd_sig;
        ShotMeans {
            monitor: mu * c.eta_apd_mon / c.theta,
            retrieved: mu * s.eta_mem_at(cfg.timing.storage_time_tst) * detect_sig,
            leakage: mu * s.leak_fraction() * detect_sig,
            noise: s.noise_mean_per_shot,
            dark: s.dark_rate_hz * cfg.timing.shot_period.as_secs_f64(),
        }
    }
}

fn poisson(mean: f64) -> Option<Poisson<f64>> {
    if mean > 0.0 {
        Some(Poisson::new(mean).expect("finite positive mean"))
    } else {
        None
    }
}

fn draw<R: Rng + ?Sized>(d: &Option<Poisson<f64>>, rng: &mut R) -> usize {
    d.as_ref().map_or(0, |d| d.sample(rng) as usize)
}

/// Per-run precomputation for [`ShotSampler::sample`].
#[derive(Debug, Clone)]
pub struct ShotSampler {
    means: ShotMeans,
    windows: Windows,
    monitor_pulse: GaussianArrival,
    retrieved_pulse: GaussianArrival,
    leak_pulse: GaussianArrival,
    noise_profile: NoiseProfile,
    /// Folded range of the whole shot: `[−t0_offset, period − t0_offset)`.
    shot_start: Time,
    shot_end: Time,
    monitor: Option<Poisson<f64>>,
    retrieved: Option<Poisson<f64>>,
    leakage: Option<Poisson<f64>>,
    noise: Option<Poisson<f64>>,
    dark: Option<Poisson<f64>>,
}

impl ShotSampler {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        let windows = cfg.windows()?;
        let means = ShotMeans::for_config(cfg);
        let sigma = cfg.signal_pulse.sigma_ps();
        let center = cfg.signal_pulse.center.as_ps() as f64;
        let fwhm = cfg.signal_pulse.fwhm.as_ps() as f64;
        let retrieved_center =
            cfg.timing.storage_time_tst.as_ps() as f64 - cfg.truth.retrieval_offset_fwhm * fwhm;
        let shot_start = -cfg.timing.t0_offset();
        Ok(ShotSampler {
            windows,
            monitor_pulse: GaussianArrival { center_ps: center, sigma_ps: sigma },
            retrieved_pulse: GaussianArrival { center_ps: retrieved_center, sigma_ps: sigma },
            leak_pulse: GaussianArrival { center_ps: center, sigma_ps: sigma },
            noise_profile: cfg.truth.noise_profile,
            shot_start,
            shot_end: shot_start + cfg.timing.shot_period,
            monitor: poisson(means.monitor),
            retrieved: poisson(means.retrieved),
            leakage: poisson(means.leakage),
            noise: poisson(means.noise),
            dark: poisson(means.dark),
            means,
        })
    }

    pub fn means(&self) -> &ShotMeans {
        &self.means
    }

    fn uniform<R: Rng + ?Sized>(rng: &mut R, start: Time, end: Time) -> Time {
        Time(rng.random_range(start.as_ps()..end.as_ps()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ShotOutcome {
        let mut out = ShotOutcome::default();
        for _ in 0..draw(&self.monitor, rng) {
            out.monitor_clicks.push(Click { t: self.monitor_pulse.sample(rng), source: Source::Monitor });
        }
        for _ in 0..draw(&self.leakage, rng) {
            out.signal_clicks.push(Click { t: self.leak_pulse.sample(rng), source: Source::Leakage });
        }
        for _ in 0..draw(&self.retrieved, rng) {
            out.signal_clicks.push(Click { t: self.retrieved_pulse.sample(rng), source: Source::Retrieved });
        }
        for _ in 0..draw(&self.noise, rng) {
            let t = match self.noise_profile {
                NoiseProfile::Uniform => Self::uniform(rng, self.windows.signal.start, self.windows.signal.end),
                NoiseProfile::Gaussian => self.retrieved_pulse.sample(rng),
            };
            out.signal_clicks.push(Click { t, source: Source::Noise });
        }
        for _ in 0..draw(&self.dark, rng) {
            let t = Self::uniform(rng, self.shot_start, self.shot_end);
            out.signal_clicks.push(Click { t, source: Source::Dark });
        }
        for _ in 0..draw(&self.dark, rng) {
            let t = Self::uniform(rng, self.shot_start, self.shot_end);
            out.monitor_clicks.push(Click { t, source: Source::Dark });
        }
        out
    }

    /// Expected counts per shot inside the configured windows, as
    /// `(monitor window on the monitor APD, signal window on the signal APD)`.
    pub fn expected_window_means(&self) -> (f64, f64) {
        let m = self.means;
        let mw = self.windows.monitor;
        let sw = self.windows.signal;
        let shot_len = (self.shot_end - self.shot_start).as_ps() as f64;
        let dark_frac = |w: &crate::model::DetectionWindow| w.len().as_ps() as f64 / shot_len;
        let monitor = m.monitor * self.monitor_pulse.mass_in(mw.start, mw.end) + m.dark * dark_frac(&mw);
        let noise_frac = match self.noise_profile {
            NoiseProfile::Uniform => 1.0,
            NoiseProfile::Gaussian => self.retrieved_pulse.mass_in(sw.start, sw.end),
        };
        let signal = m.retrieved * self.retrieved_pulse.mass_in(sw.start, sw.end)
            + m.leakage * self.leak_pulse.mass_in(sw.start, sw.end)
            + m.noise * noise_frac
            + m.dark * dark_frac(&sw);
        (monitor, signal)
    }
}

/// One shot of the sequence.
pub fn simulate_shot<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<ShotOutcome, ConfigError> {
    Ok(ShotSampler::new(cfg)?.sample(rng))
}

fn shot_rng(base: &ChaCha8Rng, shot: u64) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(shot);
    rng.set_word_pos(0);
    rng
}

/// Absolute, time-sorted records of shot `k`.
fn shot_records(sampler: &ShotSampler, cfg: &ExperimentConfig, base: &ChaCha8Rng, k: u64, out: &mut Vec<TimeTagRecord>) {
    let period = cfg.timing.shot_period.as_ps();
    let shot_start = k as i64 * period;
    let t0 = shot_start + cfg.timing.t0_offset().as_ps();
    let shot_last = shot_start + period - 1;
    let mut rng = shot_rng(base, k);
    let outcome = sampler.sample(&mut rng);
    let first = out.len();
    out.push(TimeTagRecord::new(t0 as u64, CH_SYNC));
    let abs = |c: &Click| (t0 + c.t.as_ps()).clamp(shot_start, shot_last) as u64;
    out.extend(outcome.monitor_clicks.iter().map(|c| TimeTagRecord::new(abs(c), CH_MONITOR)));
    out.extend(outcome.signal_clicks.iter().map(|c| TimeTagRecord::new(abs(c), CH_SIGNAL)));
    out[first..].sort_unstable();
}

const SHOTS_PER_BLOCK: u64 = 4096;
const BLOCKS_PER_BATCH: u64 = 64;

/// Streams a full run as a QTT1 file into `sink`. Returns the number of records written.
pub fn simulate_run_to<W: Write>(cfg: &ExperimentConfig, seed: u64, sink: W) -> Result<u64, SimError> {
    let sampler = ShotSampler::new(cfg)?;
    let base = ChaCha8Rng::seed_from_u64(seed);
    let n_shots = cfg.n_shots();
    let n_blocks = n_shots.div_ceil(SHOTS_PER_BLOCK);
    let mut writer = TagWriter::new(sink, TagHeader::for_config(cfg))?;
    let mut batch_start = 0;
    while batch_start < n_blocks {
        let batch_end = (batch_start + BLOCKS_PER_BATCH).min(n_blocks);
        let blocks: Vec<Vec<TimeTagRecord>> = (batch_start..batch_end)
            .into_par_iter()
            .map(|b| {
                let lo = b * SHOTS_PER_BLOCK;
                let hi = ((b + 1) * SHOTS_PER_BLOCK).min(n_shots);
                let mut recs = Vec::with_capacity((hi - lo) as usize + 64);
                for k in lo..hi {
                    shot_records(&sampler, cfg, &base, k, &mut recs);
                }
                recs
            })
            .collect();
        for r in blocks.iter().flatten() {
            writer.push(r)?;
        }
        batch_start = batch_end;
    }
    let written = writer.records_written();
    writer.finish()?;
    Ok(written)
}

/// A full run as QTT1 bytes. `floor(f_rep · t_int)` shots, one sync per shot.
pub fn simulate_run(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<u8>, SimError> {
    let mut buf = Vec::new();
    simulate_run_to(cfg, seed, &mut buf)?;
    Ok(buf)
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tag(#[from] TagError),
}

/// Slow multiplicative random walk applied point to point during a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriftModel {
    /// Standard deviation of the per-point log step of `eta_mem_zero`.
    pub efficiency_step: f64,
    /// Standard deviation of the per-point log step of `noise_mean_per_shot`.
    pub noise_step: f64,
}

impl DriftModel {
    pub fn none() -> Self {
        DriftModel::default()
    }

    pub fn uniform(amplitude: f64) -> Self {
        DriftModel { efficiency_step: amplitude, noise_step: amplitude }
    }
}

/// Ground truth of one campaign point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPoint {
    pub index: usize,
    pub offset_s: f64,
    pub eta_mem_zero: f64,
    pub noise_mean_per_shot: f64,
    pub signal_seed: u64,
    pub vacuum_seed: u64,
}

impl CampaignPoint {
    /// `cfg` with this point's drifted truth.
    pub fn config(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        c.truth.eta_mem_zero = self.eta_mem_zero.min(1.0);
        c.truth.noise_mean_per_shot = self.noise_mean_per_shot;
        c
    }
}

/// Drift path and per-point seeds of a campaign of `n_points` measurements
/// taken every `cadence_s` seconds.
pub fn plan_campaign(
    cfg: &ExperimentConfig,
    n_points: usize,
    cadence_s: f64,
    drift: &DriftModel,
    seed: u64,
) -> Vec<CampaignPoint> {
    let mut walk = ChaCha8Rng::seed_from_u64(seed);
    walk.set_stream(u64::MAX);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    seeds.set_stream(u64::MAX - 1);
    let (mut log_eff, mut log_noise) = (0.0f64, 0.0f64);
    (0..n_points)
        .map(|index| {
            if index > 0 {
                let a: f64 = walk.sample(StandardNormal);
                let b: f64 = walk.sample(StandardNormal);
                log_eff += drift.efficiency_step * a;
                log_noise += drift.noise_step * b;
            }
            CampaignPoint {
                index,
                offset_s: index as f64 * cadence_s,
                eta_mem_zero: cfg.truth.eta_mem_zero * log_eff.exp(),
                noise_mean_per_shot: cfg.truth.noise_mean_per_shot * log_noise.exp(),
                signal_seed: seeds.next_u64(),
                vacuum_seed: seeds.next_u64(),
            }
        })
        .collect()
}

/// Window counts of a campaign sampled directly from their aggregate Poisson
/// laws, without materializing tag files. Each point gets a signal run and a
/// vacuum reference run.
pub fn simulate_campaign_counts(
    cfg: &ExperimentConfig,
    n_points: usize,
    cadence_s: f64,
    drift: &DriftModel,
    seed: u64,
) -> Result<Vec<(CampaignPoint, WindowCounts)>, ConfigError> {
    let plan = plan_campaign(cfg, n_points, cadence_s, drift, seed);
    let n_shots = cfg.n_shots() as f64;
    plan.into_par_iter()
        .map(|p| {
            let pc = p.config(cfg);
            let (mon, sig) = ShotSampler::new(&pc)?.expected_window_means();
            let (_, vac) = ShotSampler::new(&pc.vacuum())?.expected_window_means();
            let mut rng = ChaCha8Rng::seed_from_u64(p.signal_seed);
            let mut sample = |mean: f64| poisson(mean * n_shots).map_or(0, |d| d.sample(&mut rng) as u64);
            let counts = WindowCounts {
                n_mon: sample(mon),
                n_sig: sample(sig),
                n_noi: sample(vac),
                f_rep_hz: cfg.f_rep_hz,
                t_int: cfg.t_int,
            };
            Ok((p, counts))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagstream::read_tag_bytes;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::table1();
        cfg.t_int = Time::from_secs_f64(0.01);
        cfg
    }

    #[test]
    fn table1_means() {
        let m = ShotMeans::for_config(&ExperimentConfig::table1());
        assert!((m.monitor - 0.36 / 11.2).abs() < 1e-15);
        let expect = 0.23 * (-0.15f64 / 2.4).exp() * 0.23 * 0.30;
        assert!((m.retrieved - expect).abs() < 1e-15);
        assert!((m.retrieved - 0.0148).abs() < 2e-4);
        assert!((m.leakage - 0.77 * 0.23 * 0.30).abs() < 1e-15);
        assert_eq!(m.dark, 0.0);
    }

    #[test]
    fn vacuum_input_only_noise() {
        let cfg = ExperimentConfig::table1().vacuum();
        let m = ShotMeans::for_config(&cfg);
        assert_eq!((m.monitor, m.retrieved, m.leakage), (0.0, 0.0, 0.0));
        let sampler = ShotSampler::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20_000 {
            let shot = sampler.sample(&mut rng);
            assert!(shot.monitor_clicks.is_empty());
            assert!(shot.signal_clicks.iter().all(|c| c.source == Source::Noise));
        }
    }

    #[test]
    fn noise_lands_inside_signal_window() {
        let mut cfg = ExperimentConfig::table1().vacuum();
        cfg.truth.noise_mean_per_shot = 0.5;
        let sampler = ShotSampler::new(&cfg).unwrap();
        let w = cfg.windows().unwrap().signal;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            for c in sampler.sample(&mut rng).signal_clicks {
                assert!(w.contains(c.t));
            }
        }
    }

    #[test]
    fn run_has_one_sync_per_shot_and_is_sorted() {
        let cfg = small_cfg();
        let bytes = simulate_run(&cfg, 7).unwrap();
        let (h, recs) = read_tag_bytes(&bytes).unwrap();
        assert_eq!(h, TagHeader::for_config(&cfg));
        assert_eq!(recs.iter().filter(|r| r.channel == CH_SYNC).count() as u64, cfg.n_shots());
        assert!(recs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let first_sync = recs.iter().find(|r| r.channel == CH_SYNC).unwrap();
        assert_eq!(first_sync.timestamp as i64, cfg.timing.t0_offset().as_ps());
    }

    #[test]
    fn same_seed_same_bytes_different_seed_differs() {
        let cfg = small_cfg();
        let a = simulate_run(&cfg, 42).unwrap();
        assert_eq!(a, simulate_run(&cfg, 42).unwrap());
        assert_ne!(a, simulate_run(&cfg, 43).unwrap());
    }

    #[test]
    fn output_independent_of_thread_count() {
        let cfg = small_cfg();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_run(&cfg, 9).unwrap());
        let b = four.install(|| simulate_run(&cfg, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn campaign_spans_28_hours() {
        let plan = plan_campaign(&ExperimentConfig::table1(), 1898, 53.1, &DriftModel::none(), 1);
        let span_h = plan.last().unwrap().offset_s / 3600.0;
        // 1897 intervals of 53.1 s
        assert!((span_h - 1897.0 * 53.1 / 3600.0).abs() < 1e-9 && (span_h - 28.0).abs() < 0.05, "{span_h}");
        assert!(plan.iter().all(|p| p.eta_mem_zero == 0.23 && p.noise_mean_per_shot == 1.2e-3));
    }

    #[test]
    fn campaign_plan_deterministic_with_drift() {
        let cfg = ExperimentConfig::table1();
        let d = DriftModel::uniform(0.01);
        let a = plan_campaign(&cfg, 50, 53.1, &d, 5);
        assert_eq!(a, plan_campaign(&cfg, 50, 53.1, &d, 5));
        assert!(a.iter().any(|p| p.eta_mem_zero != 0.23));
    }
}

//! Characterization metrics computed from detection-window counts.
//!
//! With `T = f_rep · t_int` shots:
//!
//! * `mu_in   = N_mon · theta / (T · eta_apd_mon)`
//! * `eta_e2e = (N_sig − N_noi) / (mu_in · eta_apd_sig · T)`
//! * `eta_mem = eta_e2e / eta_setup`
//! * `SNR     = (N_sig − N_noi) / N_noi`
//! * `mu_1    = N_noi / (eta_e2e · T)`
//! * `F       = (mu_in + mu_1) / (mu_in + 2 mu_1)`
//!
//! Note that with these definitions `SNR · mu_1 = mu_in · eta_apd_sig`, so an
//! SNR of one is reached at `mu_in = mu_1 / eta_apd_sig` rather than at `mu_1`.
//!
//! Every estimate carries its gradient with respect to the three Poisson counts
//! and the four calibration constants; [`propagate_uncertainty`] turns that into
//! separate first-order statistical and systematic standard deviations.

use serde::{Deserialize, Serialize};

use crate::error::{BinError, MetricsError};
use crate::model::{Calibration, Windows};
use crate::tagstream::{
    channel_name, fold_split, window_sum, FoldSpec, FoldedHistogram, SplitStream, TagHeader, TimeTagRecord,
    CH_MONITOR, CH_SIGNAL, CH_SYNC,
};
use crate::time::Time;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub n_mon: u64,
    pub n_sig: u64,
    /// Signal-window counts of the vacuum (`mu_in = 0`) reference run.
    pub n_noi: u64,
    pub f_rep_hz: f64,
    #[serde(rename = "t_int_s", with = "crate::time::serde_units::secs")]
    pub t_int: Time,
}

impl WindowCounts {
    /// `f_rep · t_int`.
    pub fn shots(&self) -> f64 {
        self.f_rep_hz * self.t_int.as_secs_f64()
    }

    fn net(&self) -> f64 {
        self.n_sig as f64 - self.n_noi as f64
    }
}

const N_INPUTS: usize = 7;
const I_MON: usize = 0;
const I_SIG: usize = 1;
const I_NOI: usize = 2;
const I_THETA: usize = 3;
const I_ETA_MON: usize = 4;
const I_ETA_SIG: usize = 5;
const I_ETA_SETUP: usize = 6;

/// A derived value with its gradient over
/// `(N_mon, N_sig, N_noi, theta, eta_apd_mon, eta_apd_sig, eta_setup)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub grad: [f64; N_INPUTS],
}

impl Estimate {
    /// A value with no dependence on counts or calibration.
    pub fn constant(value: f64) -> Self {
        Estimate { value, grad: [0.0; N_INPUTS] }
    }
}

/// Central value with first-order statistical and systematic standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub stat_sd: f64,
    pub sys_sd: f64,
}

impl Measured {
    /// Statistical and systematic parts combined in quadrature.
    pub fn total_sd(&self) -> f64 {
        self.stat_sd.hypot(self.sys_sd)
    }
}

/// Poisson variance `N` on each count, calibration uncertainties on the constants.
pub fn propagate_uncertainty(e: &Estimate, c: &WindowCounts, cal: &Calibration) -> Measured {
    let stat = [(I_MON, c.n_mon), (I_SIG, c.n_sig), (I_NOI, c.n_noi)]
        .iter()
        .map(|&(i, n)| e.grad[i].powi(2) * n as f64)
        .sum::<f64>();
    let sys = [
        (I_THETA, cal.theta_sd),
        (I_ETA_MON, cal.eta_apd_mon_sd),
        (I_ETA_SIG, cal.eta_apd_sig_sd),
        (I_ETA_SETUP, cal.eta_setup_sd),
    ]
    .iter()
    .map(|&(i, sd)| (e.grad[i] * sd).powi(2))
    .sum::<f64>();
    Measured { value: e.value, stat_sd: stat.sqrt(), sys_sd: sys.sqrt() }
}

pub fn mean_input_photon_number(c: &WindowCounts, cal: &Calibration) -> Result<Estimate, MetricsError> {
    let denom = c.shots() * cal.eta_apd_mon;
    if denom == 0.0 || !denom.is_finite() {
        return Err(MetricsError::ZeroDenominator("t_int * f_rep * eta_apd_mon"));
    }
    let nm = c.n_mon as f64;
    let value = nm * cal.theta / denom;
    let mut grad = [0.0; N_INPUTS];
    grad[I_MON] = cal.theta / denom;
    grad[I_THETA] = nm / denom;
    grad[I_ETA_MON] = -value / cal.eta_apd_mon;
    Ok(Estimate { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency {
    pub estimate: Estimate,
    /// `N_sig ≤ N_noi`: reported as computed, never clamped.
    pub non_positive: bool,
}

pub fn end_to_end_efficiency(
    c: &WindowCounts,
    mu_in: &Estimate,
    cal: &Calibration,
) -> Result<Efficiency, MetricsError> {
    if mu_in.value <= 0.0 {
        return Err(MetricsError::VacuumInput);
    }
    let shots = c.shots();
    if shots == 0.0 {
        return Err(MetricsError::ZeroDenominator("f_rep * t_int"));
    }
    let k = 1.0 / (mu_in.value * cal.eta_apd_sig * shots);
    let value = c.net() * k;
    let mut grad = [0.0; N_INPUTS];
    for (i, g) in grad.iter_mut().enumerate() {
        // d/dx of net · k with k ∝ 1/mu_in
        *g = -value / mu_in.value * mu_in.grad[i];
    }
    grad[I_SIG] += k;
    grad[I_NOI] -= k;
    grad[I_ETA_SIG] -= value / cal.eta_apd_sig;
    Ok(Efficiency { estimate: Estimate { value, grad }, non_positive: value <= 0.0 })
}

pub fn memory_efficiency(eta_e2e: &Estimate, cal: &Calibration) -> Estimate {
    let value = eta_e2e.value / cal.eta_setup;
    let mut grad = eta_e2e.grad.map(|g| g / cal.eta_setup);
    grad[I_ETA_SETUP] -= value / cal.eta_setup;
    Estimate { value, grad }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Finite(Estimate),
    /// `N_noi = 0`.
    Infinite,
}

pub fn snr(c: &WindowCounts) -> Snr {
    if c.n_noi == 0 {
        return Snr::Infinite;
    }
    let nn = c.n_noi as f64;
    let mut grad = [0.0; N_INPUTS];
    grad[I_SIG] = 1.0 / nn;
    grad[I_NOI] = -(c.n_sig as f64) / (nn * nn);
    Snr::Finite(Estimate { value: c.net() / nn, grad })
}

pub fn mu1(c: &WindowCounts, eta_e2e: &Estimate) -> Result<Estimate, MetricsError> {
    if eta_e2e.value <= 0.0 {
        return Err(MetricsError::NonPositiveEfficiency(eta_e2e.value));
    }
    let shots = c.shots();
    let nn = c.n_noi as f64;
    let value = nn / (eta_e2e.value * shots);
    let mut grad = eta_e2e.grad.map(|g| -value / eta_e2e.value * g);
    grad[I_NOI] += 1.0 / (eta_e2e.value * shots);
    Ok(Estimate { value, grad })
}

pub fn fidelity(mu_in: f64, mu_1: f64) -> Result<f64, MetricsError> {
    if mu_in < 0.0 || mu_1 < 0.0 {
        return Err(MetricsError::Domain(format!("photon numbers must be >= 0 (mu_in = {mu_in}, mu_1 = {mu_1})")));
    }
    if mu_in == 0.0 && mu_1 == 0.0 {
        return Err(MetricsError::FidelityUndefined);
    }
    Ok((mu_in + mu_1) / (mu_in + 2.0 * mu_1))
}

pub fn fidelity_estimate(mu_in: &Estimate, mu_1: &Estimate) -> Result<Estimate, MetricsError> {
    let value = fidelity(mu_in.value, mu_1.value)?;
    let d = (mu_in.value + 2.0 * mu_1.value).powi(2);
    let d_mu = mu_1.value / d;
    let d_mu1 = -mu_in.value / d;
    let mut grad = [0.0; N_INPUTS];
    for (i, g) in grad.iter_mut().enumerate() {
        *g = d_mu * mu_in.grad[i] + d_mu1 * mu_1.grad[i];
    }
    Ok(Estimate { value, grad })
}

/// Neglected Poisson tail mass allowed when the photon-number cut-off is chosen.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// One photon-number stratum of the classical strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub n: usize,
    pub p_n: f64,
    /// Best measure-and-prepare fidelity on an `n`-photon input, `(n+1)/(n+2)`.
    pub f_n: f64,
    /// Probability mass of this stratum the strategy lets through.
    pub accepted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalThreshold {
    pub mu_in: f64,
    pub eta_accept: f64,
    pub n_max: usize,
    pub tail_bound: f64,
    pub f_class: f64,
    pub strata: Vec<Stratum>,
}

/// Poisson pmf for `0..=n_max` and an upper bound on the mass beyond `n_max`.
fn poisson_strata(mu: f64, n_max: Option<usize>) -> Result<(Vec<f64>, f64), MetricsError> {
    let ln_mu = mu.ln();
    let mut ln_fact = 0.0;
    let mut pmf = Vec::new();
    let tail_after = |n: usize, p_n: f64| {
        // Σ_{k>n} p_k ≤ p_{n+1} / (1 − mu/(n+2)) once n + 2 > mu.
        let ratio = mu / (n as f64 + 2.0);
        if ratio >= 1.0 {
            f64::INFINITY
        } else {
            p_n * mu / (n as f64 + 1.0) / (1.0 - ratio)
        }
    };
    let mut n = 0usize;
    loop {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        let p = (-mu + n as f64 * ln_mu - ln_fact).exp();
        pmf.push(p);
        let tail = tail_after(n, p);
        match n_max {
            Some(max) if n == max => {
                if tail > TAIL_TOLERANCE {
                    return Err(MetricsError::TailTooLarge { n_max: max, tail, tolerance: TAIL_TOLERANCE });
                }
                return Ok((pmf, tail));
            }
            None if n >= 10 && tail < TAIL_TOLERANCE => return Ok((pmf, tail)),
            _ => {}
        }
        n += 1;
    }
}

/// Fidelity bound of a measure-and-prepare device that may discard inputs.
///
/// The device keeps a fraction `eta_accept` of all shots, choosing the ones
/// with the most photons: strata are accepted whole from the largest `N`
/// downward, with a fractional acceptance of the boundary stratum. An accepted
/// `N`-photon shot reaches fidelity `(N+1)/(N+2)`; the bound is the
/// acceptance-weighted mean. `n_max = None` picks the cut-off so that the
/// neglected Poisson tail stays below [`TAIL_TOLERANCE`].
pub fn classical_threshold(
    mu_in: f64,
    eta_accept: f64,
    n_max: Option<usize>,
) -> Result<ClassicalThreshold, MetricsError> {
    if !(mu_in > 0.0 && mu_in.is_finite()) {
        return Err(MetricsError::Domain(format!("mu_in must be > 0, got {mu_in}")));
    }
    if !(eta_accept > 0.0 && eta_accept <= 1.0) {
        return Err(MetricsError::Domain(format!("eta_accept must be in (0,1], got {eta_accept}")));
    }
    if let Some(max) = n_max {
        if max < 10 {
            return Err(MetricsError::Domain(format!("N_max must be >= 10, got {max}")));
        }
    }
    let (pmf, tail_bound) = poisson_strata(mu_in, n_max)?;
    let mut strata: Vec<Stratum> = pmf
        .iter()
        .enumerate()
        .map(|(n, &p_n)| Stratum { n, p_n, f_n: (n as f64 + 1.0) / (n as f64 + 2.0), accepted: 0.0 })
        .collect();
    let mut remaining = eta_accept;
    let mut weighted = 0.0;
    for s in strata.iter_mut().rev() {
        if remaining <= 0.0 {
            break;
        }
        let take = s.p_n.min(remaining);
        s.accepted = take;
        weighted += take * s.f_n;
        remaining -= take;
    }
    let accepted = eta_accept - remaining.max(0.0);
    Ok(ClassicalThreshold {
        mu_in,
        eta_accept,
        n_max: strata.len() - 1,
        tail_bound,
        f_class: weighted / accepted,
        strata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// `N_mon = 0`: efficiency, `mu_1` and fidelity are undefined.
    VacuumInput,
    /// `N_sig ≤ N_noi`.
    NonPositiveSignal,
    /// `N_noi = 0`.
    InfiniteSnr,
    /// Signal and vacuum runs disagree on `f_rep · t_int`.
    ShotCountMismatch,
    /// Sync count differs from `floor(f_rep · t_int)`.
    SyncCountMismatch,
}

/// The full metric set of one measurement point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub counts: WindowCounts,
    pub mu_in: Measured,
    pub eta_e2e: Option<Measured>,
    pub eta_mem: Option<Measured>,
    pub snr: Option<Measured>,
    pub mu_1: Option<Measured>,
    pub fidelity: Option<Measured>,
    /// Classical bound with `eta_accept = eta_e2e`.
    pub f_class_e2e: Option<f64>,
    /// Classical bound with `eta_accept = eta_mem`.
    pub f_class_mem: Option<f64>,
    pub flags: Vec<Flag>,
}

fn class_bound(mu: f64, eta: f64) -> Option<f64> {
    if mu > 0.0 && eta > 0.0 && eta <= 1.0 {
        classical_threshold(mu, eta, None).ok().map(|t| t.f_class)
    } else {
        None
    }
}

/// Every metric from one set of window counts.
pub fn compute_metrics(c: &WindowCounts, cal: &Calibration) -> Result<MetricsResult, MetricsError> {
    let mut flags = Vec::new();
    let mu = mean_input_photon_number(c, cal)?;
    let prop = |e: &Estimate| propagate_uncertainty(e, c, cal);
    let snr_m = match snr(c) {
        Snr::Finite(e) => Some(prop(&e)),
        Snr::Infinite => {
            flags.push(Flag::InfiniteSnr);
            None
        }
    };
    let mut r = MetricsResult {
        counts: *c,
        mu_in: prop(&mu),
        eta_e2e: None,
        eta_mem: None,
        snr: snr_m,
        mu_1: None,
        fidelity: None,
        f_class_e2e: None,
        f_class_mem: None,
        flags,
    };
    let eff = match end_to_end_efficiency(c, &mu, cal) {
        Ok(e) => e,
        Err(MetricsError::VacuumInput) => {
            r.flags.push(Flag::VacuumInput);
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    let mem = memory_efficiency(&eff.estimate, cal);
    r.eta_e2e = Some(prop(&eff.estimate));
    r.eta_mem = Some(prop(&mem));
    if eff.non_positive {
        r.flags.push(Flag::NonPositiveSignal);
        return Ok(r);
    }
    let m1 = mu1(c, &eff.estimate)?;
    r.mu_1 = Some(prop(&m1));
    r.fidelity = Some(prop(&fidelity_estimate(&mu, &m1)?));
    r.f_class_e2e = class_bound(mu.value, eff.estimate.value);
    r.f_class_mem = class_bound(mu.value, mem.value);
    Ok(r)
}

/// A decoded tag file.
#[derive(Debug, Clone)]
pub struct TagRun {
    pub header: TagHeader,
    pub records: Vec<TimeTagRecord>,
}

pub enum NoiseReference<'a> {
    /// Vacuum run recorded under otherwise identical settings.
    Vacuum(&'a TagRun),
    /// Externally measured `N_noi`.
    Counts(u64),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldOptions {
    pub bin_width: Time,
    pub origin: Time,
    pub span: Time,
}

impl FoldOptions {
    pub fn for_config(cfg: &crate::model::ExperimentConfig) -> Self {
        let s = FoldSpec::for_config(cfg, CH_SIGNAL);
        FoldOptions { bin_width: s.bin_width, origin: s.origin, span: s.span }
    }

    fn spec(&self, target: u16) -> FoldSpec {
        FoldSpec { sync_channel: CH_SYNC, target_channel: target, bin_width: self.bin_width, origin: self.origin, span: self.span }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("{run} run is missing channel {channel} ({name})")]
    MissingChannel { run: &'static str, channel: u16, name: &'static str },
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub result: MetricsResult,
    pub monitor_histogram: FoldedHistogram,
    pub signal_histogram: FoldedHistogram,
    pub vacuum_histogram: Option<FoldedHistogram>,
}

fn require_channels(run: &TagRun, name: &'static str, channels: &[u16]) -> Result<(), AnalysisError> {
    for &ch in channels {
        let present = run.header.has_channel(ch) && (ch != CH_SYNC || run.records.iter().any(|r| r.channel == CH_SYNC));
        if !present {
            return Err(AnalysisError::MissingChannel { run: name, channel: ch, name: channel_name(ch) });
        }
    }
    Ok(())
}

fn fold_channel(run: &TagRun, opts: &FoldOptions, ch: u16) -> Result<FoldedHistogram, BinError> {
    fold_split(&SplitStream::from_records(&run.records, CH_SYNC, ch), &opts.spec(ch))
}

/// Folds and bins both runs, integrates the detection windows and evaluates
/// every metric.
pub fn analyze(
    run: &TagRun,
    noise: &NoiseReference<'_>,
    cal: &Calibration,
    windows: &Windows,
    opts: &FoldOptions,
) -> Result<Analysis, AnalysisError> {
    require_channels(run, "signal", &[CH_SYNC, CH_SIGNAL, CH_MONITOR])?;
    let monitor_histogram = fold_channel(run, opts, CH_MONITOR)?;
    let signal_histogram = fold_channel(run, opts, CH_SIGNAL)?;
    let n_mon = window_sum(&monitor_histogram, &windows.monitor)?;
    let n_sig = window_sum(&signal_histogram, &windows.signal)?;

    let mut extra_flags = Vec::new();
    let (n_noi, vacuum_histogram) = match noise {
        NoiseReference::Vacuum(vac) => {
            require_channels(vac, "vacuum", &[CH_SYNC, CH_SIGNAL])?;
            if vac.header.f_rep_mhz != run.header.f_rep_mhz || vac.header.t_int_ms != run.header.t_int_ms {
                extra_flags.push(Flag::ShotCountMismatch);
            }
            let h = fold_channel(vac, opts, CH_SIGNAL)?;
            (window_sum(&h, &windows.signal)?, Some(h))
        }
        NoiseReference::Counts(n) => (*n, None),
        NoiseReference::None => return Err(MetricsError::MissingNoiseReference.into()),
    };

    let counts = WindowCounts { n_mon, n_sig, n_noi, f_rep_hz: run.header.f_rep_hz(), t_int: run.header.t_int() };
    let expected_syncs = crate::model::shots_for(counts.f_rep_hz, counts.t_int);
    if signal_histogram.n_shots.abs_diff(expected_syncs) > 1 {
        extra_flags.push(Flag::SyncCountMismatch);
    }
    let mut result = compute_metrics(&counts, cal)?;
    result.flags.extend(extra_flags);
    Ok(Analysis { result, monitor_histogram, signal_histogram, vacuum_histogram })
}

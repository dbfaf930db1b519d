//! Domain types shared by the simulator and the analysis pipeline: sequence
//! timing, pulse shapes, detector calibration, experiment configuration and the
//! detection windows used to integrate photon counts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ConfigViolation};
use crate::time::{serde_units, Time, PS_PER_S};

/// `2·sqrt(2·ln 2)`, the ratio between a Gaussian's FWHM and its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Timing of one repetition of the storage sequence.
///
/// The per-shot frame has its origin at the centre of the write control pulse
/// (`t_0 = 0`). The optical pump runs *before* `t_0`: it lasts `pump_duration`
/// and is followed by `pump_settle` of dead time while the pump AOM switches off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTiming {
    #[serde(rename = "pump_duration_us", with = "serde_units::us")]
    pub pump_duration: Time,
    #[serde(rename = "pump_settle_ns", with = "serde_units::ns")]
    pub pump_settle: Time,
    #[serde(rename = "write_center_t0_ns", with = "serde_units::ns")]
    pub write_center_t0: Time,
    #[serde(rename = "signal_delay_td_ns", with = "serde_units::ns")]
    pub signal_delay_td: Time,
    #[serde(rename = "storage_time_tst_ns", with = "serde_units::ns")]
    pub storage_time_tst: Time,
    #[serde(rename = "shot_period_ns", with = "serde_units::ns")]
    pub shot_period: Time,
}

impl SequenceTiming {
    pub fn table1(f_rep_hz: f64) -> Self {
        SequenceTiming {
            pump_duration: Time::us(30),
            pump_settle: Time::ns(250),
            write_center_t0: Time::ZERO,
            signal_delay_td: Time::ns(5),
            storage_time_tst: Time::ns(150),
            shot_period: shot_period_for(f_rep_hz),
        }
    }

    /// Latest folded time that still belongs to this shot: the next shot's
    /// pump starts `shot_period − pump_duration − pump_settle` after `t_0`.
    pub fn frame_end(&self) -> Time {
        self.shot_period - self.pump_duration - self.pump_settle
    }

    /// Offset of `t_0` from the start of the shot (start of the pump pulse).
    pub fn t0_offset(&self) -> Time {
        self.pump_duration + self.pump_settle + self.write_center_t0
    }
}

/// `round(1 / f_rep)` in picoseconds.
pub fn shot_period_for(f_rep_hz: f64) -> Time {
    Time((PS_PER_S as f64 / f_rep_hz).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    #[serde(default)]
    pub shape: PulseShape,
    #[serde(rename = "center_ns", with = "serde_units::ns")]
    pub center: Time,
    #[serde(rename = "fwhm_ns", with = "serde_units::ns")]
    pub fwhm: Time,
    /// Mean photon number for the signal; informational peak power (mW) for control pulses.
    pub mean_area: f64,
}

impl PulseSpec {
    pub fn gaussian(center: Time, fwhm: Time, mean_area: f64) -> Self {
        PulseSpec { shape: PulseShape::Gaussian, center, fwhm, mean_area }
    }

    /// Standard deviation in picoseconds.
    pub fn sigma_ps(&self) -> f64 {
        self.fwhm.as_ps() as f64 / FWHM_PER_SIGMA
    }
}

/// Detector and beam-splitter calibration with one-sigma systematic uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Memory path / monitor path splitting ratio.
    pub theta: f64,
    pub theta_sd: f64,
    pub eta_apd_mon: f64,
    pub eta_apd_mon_sd: f64,
    pub eta_apd_sig: f64,
    pub eta_apd_sig_sd: f64,
    /// Transmission from the memory cell output to the signal APD fibre.
    pub eta_setup: f64,
    pub eta_setup_sd: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            theta: 11.2,
            theta_sd: 0.4,
            eta_apd_mon: 0.36,
            eta_apd_mon_sd: 0.05,
            eta_apd_sig: 0.30,
            eta_apd_sig_sd: 0.05,
            eta_setup: 0.23,
            eta_setup_sd: 0.01,
        }
    }
}

impl Calibration {
    /// Same central values with every systematic uncertainty set to zero.
    pub fn without_systematics(&self) -> Self {
        Calibration {
            theta_sd: 0.0,
            eta_apd_mon_sd: 0.0,
            eta_apd_sig_sd: 0.0,
            eta_setup_sd: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseProfile {
    /// Flat over the signal detection window.
    #[default]
    Uniform,
    /// Same shape and centre as the retrieved pulse.
    Gaussian,
}

/// Ground truth fed to the simulator. The analysis pipeline never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// Zero-storage-time memory efficiency `H_mem`.
    pub eta_mem_zero: f64,
    #[serde(rename = "lifetime_tau_us", with = "serde_units::us")]
    pub lifetime_tau: Time,
    /// Mean detected noise counts per shot inside the signal window at vacuum input.
    pub noise_mean_per_shot: f64,
    #[serde(default)]
    pub dark_rate_hz: f64,
    /// Fraction of the input that leaks through unstored; `1 − eta_mem_zero` when absent.
    #[serde(default)]
    pub leak_fraction: Option<f64>,
    /// Retrieved-pulse centre is `t_st − retrieval_offset_fwhm · fwhm`.
    #[serde(default = "default_retrieval_offset")]
    pub retrieval_offset_fwhm: f64,
    #[serde(default)]
    pub noise_profile: NoiseProfile,
    /// Reserved: detector dead time is not modelled and `true` is rejected.
    #[serde(default)]
    pub model_dead_time: bool,
}

fn default_retrieval_offset() -> f64 {
    2.3
}

impl Default for SimTruth {
    fn default() -> Self {
        SimTruth {
            eta_mem_zero: 0.23,
            lifetime_tau: Time::from_us_f64(2.4),
            noise_mean_per_shot: 1.2e-3,
            dark_rate_hz: 0.0,
            leak_fraction: None,
            retrieval_offset_fwhm: default_retrieval_offset(),
            noise_profile: NoiseProfile::Uniform,
            model_dead_time: false,
        }
    }
}

impl SimTruth {
    pub fn leak_fraction(&self) -> f64 {
        self.leak_fraction.unwrap_or(1.0 - self.eta_mem_zero)
    }

    /// `eta_mem_zero · exp(−t / tau)`.
    pub fn eta_mem_at(&self, storage_time: Time) -> f64 {
        self.eta_mem_zero * (-(storage_time.as_ps() as f64) / self.lifetime_tau.as_ps() as f64).exp()
    }
}

/// Detection-window offsets in units of the signal FWHM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOffsets {
    /// Monitor window is `t_0 ± monitor_half_width · fwhm`.
    pub monitor_half_width: f64,
    /// Signal window starts at `t_st − signal_start · fwhm`.
    pub signal_start: f64,
    /// Signal window ends at `t_st − signal_end · fwhm`.
    pub signal_end: f64,
}

impl Default for WindowOffsets {
    fn default() -> Self {
        WindowOffsets { monitor_half_width: 4.0, signal_start: 4.0, signal_end: 0.6 }
    }
}

/// Half-open interval `[start, end)` in the folded per-shot frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionWindow {
    #[serde(rename = "start_ps")]
    pub start: Time,
    #[serde(rename = "end_ps")]
    pub end: Time,
}

impl DetectionWindow {
    pub fn new(start: Time, end: Time) -> Result<Self, ConfigError> {
        if start >= end {
            return Err(ConfigError::single(
                "window",
                format!("window start {start} must be before end {end}"),
            ));
        }
        Ok(DetectionWindow { start, end })
    }

    pub fn len(&self) -> Time {
        self.end - self.start
    }

    pub fn contains(&self, t: Time) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &DetectionWindow) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn midpoint(&self) -> Time {
        Time((self.start.as_ps() + self.end.as_ps()) / 2)
    }
}

impl fmt::Display for DetectionWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub monitor: DetectionWindow,
    pub signal: DetectionWindow,
}

/// Monitor window `t_0 ± 4·fwhm` and signal window `[t_st − 4·fwhm, t_st − 0.6·fwhm)`.
pub fn default_windows(timing: &SequenceTiming, signal_fwhm: Time) -> Result<Windows, ConfigError> {
    windows_with_offsets(timing, signal_fwhm, &WindowOffsets::default())
}

pub fn windows_with_offsets(
    timing: &SequenceTiming,
    signal_fwhm: Time,
    offsets: &WindowOffsets,
) -> Result<Windows, ConfigError> {
    if signal_fwhm <= Time::ZERO {
        return Err(ConfigError::single("signal_pulse.fwhm_ns", "signal FWHM must be positive"));
    }
    let t0 = timing.write_center_t0;
    let half = signal_fwhm.scale(offsets.monitor_half_width);
    let monitor = DetectionWindow::new(t0 - half, t0 + half)?;
    let tst = timing.storage_time_tst;
    let signal = DetectionWindow::new(
        tst - signal_fwhm.scale(offsets.signal_start),
        tst - signal_fwhm.scale(offsets.signal_end),
    )?;
    check_windows(timing, &Windows { monitor, signal })
}

/// Checks that explicit windows are disjoint and lie inside the shot frame.
pub fn check_windows(timing: &SequenceTiming, w: &Windows) -> Result<Windows, ConfigError> {
    let mut violations = Vec::new();
    if w.monitor.overlaps(&w.signal) {
        violations.push(ConfigViolation::new(
            "windows",
            format!("signal window {} overlaps monitor window {}", w.signal, w.monitor),
        ));
    }
    let frame_start = -timing.pump_settle;
    let frame_end = timing.frame_end();
    for (name, win) in [("monitor", &w.monitor), ("signal", &w.signal)] {
        if win.start < frame_start || win.end > frame_end {
            violations.push(ConfigViolation::new(
                "windows",
                format!("{name} window {win} exceeds the shot frame [{frame_start}, {frame_end})"),
            ));
        }
    }
    if violations.is_empty() {
        Ok(*w)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

/// Full parameter set of one measurement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub timing: SequenceTiming,
    pub signal_pulse: PulseSpec,
    pub control_write: PulseSpec,
    pub control_read: PulseSpec,
    pub f_rep_hz: f64,
    #[serde(rename = "t_int_s", with = "serde_units::secs")]
    pub t_int: Time,
    pub mu_in_target: f64,
    pub detuning_ghz: f64,
    pub cell_temperature_c: f64,
    pub calibration: Calibration,
    pub truth: SimTruth,
    #[serde(default)]
    pub window_offsets: WindowOffsets,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::table1()
    }
}

impl ExperimentConfig {
    /// Long-duration operating point: 10 ns signal, 25 ns / 5 mW control,
    /// 30 us pump, 1.5 GHz red detuning, 75 C cell, 20 s integration at 31 kHz.
    pub fn table1() -> Self {
        let f_rep_hz = 31_000.0;
        let timing = SequenceTiming::table1(f_rep_hz);
        ExperimentConfig {
            signal_pulse: PulseSpec::gaussian(Time::ZERO, Time::ns(10), 1.0),
            control_write: PulseSpec::gaussian(Time::ZERO, Time::ns(25), 5.0),
            control_read: PulseSpec::gaussian(timing.storage_time_tst, Time::ns(25), 5.0),
            timing,
            f_rep_hz,
            t_int: Time::secs(20),
            mu_in_target: 1.0,
            detuning_ghz: 1.5,
            cell_temperature_c: 75.0,
            calibration: Calibration::default(),
            truth: SimTruth::default(),
            window_offsets: WindowOffsets::default(),
        }
    }

    /// Parses a config document. `timing.shot_period_ns` may be omitted, in
    /// which case it is derived as `round(1 / f_rep_hz)`.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let f_rep = value.get("f_rep_hz").and_then(|v| v.as_f64());
        if let (Some(f_rep), Some(timing)) = (f_rep, value.get_mut("timing").and_then(|t| t.as_object_mut())) {
            if !timing.contains_key("shot_period_ns") && f_rep > 0.0 {
                let period = shot_period_for(f_rep);
                timing.insert("shot_period_ns".into(), serde_json::json!(period.as_ps() as f64 / 1e3));
            }
        }
        serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `floor(f_rep · t_int)`.
    pub fn n_shots(&self) -> u64 {
        shots_for(self.f_rep_hz, self.t_int)
    }

    pub fn windows(&self) -> Result<Windows, ConfigError> {
        windows_with_offsets(&self.timing, self.signal_pulse.fwhm, &self.window_offsets)
    }

    /// Same configuration with the input switched off, as used for the noise reference run.
    pub fn vacuum(&self) -> Self {
        ExperimentConfig { mu_in_target: 0.0, ..self.clone() }
    }
}

pub fn shots_for(f_rep_hz: f64, t_int: Time) -> u64 {
    let n = f_rep_hz * t_int.as_secs_f64();
    // Guard against 31000 * 20.0 landing a hair below an integer.
    (n + 1e-9).floor().max(0.0) as u64
}

fn check_probability(v: &mut Vec<ConfigViolation>, field: &str, p: f64) {
    if !(p > 0.0 && p <= 1.0) {
        v.push(ConfigViolation::new(field, format!("probability must be in (0,1], got {p}")));
    }
}

fn check_sd(v: &mut Vec<ConfigViolation>, field: &str, sd: f64) {
    if !(sd >= 0.0 && sd.is_finite()) {
        v.push(ConfigViolation::new(field, format!("uncertainty must be finite and >= 0, got {sd}")));
    }
}

/// Returns the config unchanged when every invariant holds, otherwise every
/// violated invariant.
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut v = Vec::new();
    let t = &cfg.timing;

    for (field, time) in [
        ("timing.pump_duration_us", t.pump_duration),
        ("timing.pump_settle_ns", t.pump_settle),
        ("timing.signal_delay_td_ns", t.signal_delay_td),
        ("timing.storage_time_tst_ns", t.storage_time_tst),
        ("timing.shot_period_ns", t.shot_period),
    ] {
        if time < Time::ZERO {
            v.push(ConfigViolation::new(field, format!("time must be non-negative, got {time}")));
        }
    }
    if t.write_center_t0 != Time::ZERO {
        v.push(ConfigViolation::new("timing.write_center_t0_ns", "t_0 is the frame origin and must be 0"));
    }
    for (field, p) in [
        ("signal_pulse.fwhm_ns", &cfg.signal_pulse),
        ("control_write.fwhm_ns", &cfg.control_write),
        ("control_read.fwhm_ns", &cfg.control_read),
    ] {
        if p.fwhm <= Time::ZERO {
            v.push(ConfigViolation::new(field, "fwhm must be > 0"));
        }
    }
    if t.storage_time_tst <= cfg.signal_pulse.fwhm {
        v.push(ConfigViolation::new(
            "timing.storage_time_tst_ns",
            format!("storage time {} must exceed the signal FWHM {}", t.storage_time_tst, cfg.signal_pulse.fwhm),
        ));
    }
    let readout = cfg.signal_pulse.fwhm.scale(cfg.window_offsets.monitor_half_width);
    let busy = t.pump_duration + t.pump_settle + t.storage_time_tst + readout;
    if busy >= t.shot_period {
        v.push(ConfigViolation::new(
            "timing.shot_period_ns",
            format!("pump + settle + storage + read-out ({busy}) must fit in the shot period {}", t.shot_period),
        ));
    }

    if !(cfg.f_rep_hz > 0.0 && cfg.f_rep_hz.is_finite()) {
        v.push(ConfigViolation::new("f_rep_hz", format!("repetition rate must be positive, got {}", cfg.f_rep_hz)));
    } else if cfg.n_shots() < 1 {
        v.push(ConfigViolation::new(
            "t_int_s",
            format!("fewer than one shot: f_rep * t_int = {}", cfg.f_rep_hz * cfg.t_int.as_secs_f64()),
        ));
    }
    if !(cfg.mu_in_target >= 0.0 && cfg.mu_in_target.is_finite()) {
        v.push(ConfigViolation::new("mu_in_target", format!("must be >= 0, got {}", cfg.mu_in_target)));
    }

    let c = &cfg.calibration;
    if !(c.theta >= 1.0 && c.theta.is_finite()) {
        v.push(ConfigViolation::new("calibration.theta", format!("splitting ratio must be >= 1, got {}", c.theta)));
    }
    check_probability(&mut v, "calibration.eta_apd_mon", c.eta_apd_mon);
    check_probability(&mut v, "calibration.eta_apd_sig", c.eta_apd_sig);
    check_probability(&mut v, "calibration.eta_setup", c.eta_setup);
    check_sd(&mut v, "calibration.theta_sd", c.theta_sd);
    check_sd(&mut v, "calibration.eta_apd_mon_sd", c.eta_apd_mon_sd);
    check_sd(&mut v, "calibration.eta_apd_sig_sd", c.eta_apd_sig_sd);
    check_sd(&mut v, "calibration.eta_setup_sd", c.eta_setup_sd);

    let s = &cfg.truth;
    if !(0.0..=1.0).contains(&s.eta_mem_zero) {
        v.push(ConfigViolation::new("truth.eta_mem_zero", format!("must be in [0,1], got {}", s.eta_mem_zero)));
    }
    if s.lifetime_tau <= Time::ZERO {
        v.push(ConfigViolation::new("truth.lifetime_tau_us", "lifetime must be > 0"));
    }
    if !(s.noise_mean_per_shot >= 0.0 && s.noise_mean_per_shot.is_finite()) {
        v.push(ConfigViolation::new("truth.noise_mean_per_shot", format!("must be >= 0, got {}", s.noise_mean_per_shot)));
    }
    if !(s.dark_rate_hz >= 0.0 && s.dark_rate_hz.is_finite()) {
        v.push(ConfigViolation::new("truth.dark_rate_hz", format!("must be >= 0, got {}", s.dark_rate_hz)));
    }
    if let Some(leak) = s.leak_fraction {
        if !(0.0..=1.0).contains(&leak) {
            v.push(ConfigViolation::new("truth.leak_fraction", format!("must be in [0,1], got {leak}")));
        }
    }
    if s.model_dead_time {
        v.push(ConfigViolation::new("truth.model_dead_time", "detector dead time is not supported"));
    }

    let o = &cfg.window_offsets;
    if !(o.monitor_half_width > 0.0 && o.signal_start > o.signal_end) {
        v.push(ConfigViolation::new(
            "window_offsets",
            "monitor half width must be > 0 and signal_start must exceed signal_end",
        ));
    }
    if v.is_empty() && cfg.signal_pulse.fwhm > Time::ZERO {
        if let Err(ConfigError::Invalid(w)) = cfg.windows() {
            v.extend(w);
        }
    }

    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn timing_with(tst: Time) -> SequenceTiming {
        SequenceTiming { storage_time_tst: tst, ..SequenceTiming::table1(31_000.0) }
    }

    #[test]
    fn windows_at_table1_operating_point() {
        let w = default_windows(&timing_with(Time::ns(150)), Time::ns(10)).unwrap();
        assert_eq!(w.monitor, DetectionWindow { start: Time::ns(-40), end: Time::ns(40) });
        assert_eq!(w.signal, DetectionWindow { start: Time::ns(110), end: Time::ns(144) });
    }

    #[test]
    fn windows_for_5ns_pulse() {
        let w = default_windows(&timing_with(Time::ns(150)), Time::ns(5)).unwrap();
        assert_eq!(w.monitor, DetectionWindow { start: Time::ns(-20), end: Time::ns(20) });
        assert_eq!(w.signal, DetectionWindow { start: Time::ns(130), end: Time::ns(147) });
    }

    #[test]
    fn short_storage_time_overlaps_monitor() {
        let err = default_windows(&timing_with(Time::ns(40)), Time::ns(10)).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn windows_beyond_frame_rejected() {
        let err = default_windows(&timing_with(Time::us(3)), Time::ns(10)).unwrap_err();
        assert!(err.to_string().contains("exceeds the shot frame"), "{err}");
    }

    #[test]
    fn zero_fwhm_rejected() {
        assert!(default_windows(&timing_with(Time::ns(150)), Time::ZERO).is_err());
    }

    #[test]
    fn table1_signal_window_inside_frame() {
        let cfg = ExperimentConfig::table1();
        let w = cfg.windows().unwrap();
        assert!(w.signal.start > cfg.timing.write_center_t0);
        assert!(w.signal.end < cfg.timing.shot_period);
        assert_eq!(cfg.timing.shot_period, Time::ps(32_258_065));
    }

    #[test]
    fn table1_is_valid() {
        let cfg = ExperimentConfig::table1();
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);
        assert_eq!(cfg.n_shots(), 620_000);
    }

    #[test]
    fn zero_apd_efficiency_rejected() {
        let mut cfg = ExperimentConfig::table1();
        cfg.calibration.eta_apd_sig = 0.0;
        let err = validate_config(cfg).unwrap_err();
        let ConfigError::Invalid(v) = err else { panic!() };
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "calibration.eta_apd_sig");
        assert!(v[0].message.contains("probability must be in (0,1]"));
    }

    #[test]
    fn too_short_integration_rejected() {
        let mut cfg = ExperimentConfig::table1();
        cfg.t_int = Time::us(10);
        let ConfigError::Invalid(v) = validate_config(cfg).unwrap_err() else { panic!() };
        assert!(v.iter().any(|x| x.field == "t_int_s" && x.message.contains("fewer than one shot")));
    }

    #[test]
    fn every_violation_is_reported() {
        let mut cfg = ExperimentConfig::table1();
        cfg.calibration.theta = 0.5;
        cfg.calibration.eta_apd_mon = 1.5;
        cfg.truth.lifetime_tau = Time::ZERO;
        cfg.mu_in_target = -1.0;
        let ConfigError::Invalid(v) = validate_config(cfg).unwrap_err() else { panic!() };
        let fields: Vec<_> = v.iter().map(|x| x.field.as_str()).collect();
        for f in ["calibration.theta", "calibration.eta_apd_mon", "truth.lifetime_tau_us", "mu_in_target"] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn json_round_trip_and_period_derivation() {
        let cfg = ExperimentConfig::table1();
        let text = cfg.to_json();
        assert!(text.contains("\"fwhm_ns\": 10.0"));
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);

        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["timing"].as_object_mut().unwrap().remove("shot_period_ns");
        let back = ExperimentConfig::from_json(&value.to_string()).unwrap();
        assert_eq!(back.timing.shot_period, cfg.timing.shot_period);
    }

    #[test]
    fn gaussian_sigma_from_fwhm() {
        let p = PulseSpec::gaussian(Time::ZERO, Time::ns(10), 1.0);
        assert!((p.sigma_ps() - 10_000.0 / (2.0 * (2.0 * 2f64.ln()).sqrt())).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn windows_scale_covariant(fwhm_steps in 1i64..4_000, tst_ns in 100i64..1_500, k in 1i64..4) {
            // fwhm multiple of 5 ps keeps 0.6·fwhm integral
            let fwhm = Time::ps(5 * fwhm_steps);
            let base = SequenceTiming {
                storage_time_tst: Time::ns(tst_ns),
                shot_period: Time::us(200),
                pump_duration: Time::us(30),
                pump_settle: Time::ns(250),
                ..SequenceTiming::table1(31_000.0)
            };
            let scaled = SequenceTiming {
                storage_time_tst: base.storage_time_tst * k,
                shot_period: base.shot_period * k,
                pump_duration: base.pump_duration * k,
                pump_settle: base.pump_settle * k,
                ..base.clone()
            };
            if let (Ok(a), Ok(b)) = (default_windows(&base, fwhm), default_windows(&scaled, fwhm * k)) {
                prop_assert_eq!(a.monitor.start * k, b.monitor.start);
                prop_assert_eq!(a.monitor.end * k, b.monitor.end);
                prop_assert_eq!(a.signal.start * k, b.signal.start);
                prop_assert_eq!(a.signal.end * k, b.signal.end);
            }
        }
    }
}

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
}

impl ConfigViolation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigViolation { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigViolation>),
}

impl ConfigError {
    pub fn single(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid(vec![ConfigViolation::new(field, message)])
    }
}

#[derive(Debug, Error)]
pub enum TagError {
    #[error("bad magic {found:?} at byte 0 (expected \"QTT1\")")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {version} at byte 4")]
    UnsupportedVersion { version: u16 },
    #[error("unsupported header field {field} = {value} at byte {offset}")]
    UnsupportedHeader { field: &'static str, value: u64, offset: u64 },
    #[error("truncated {what} at byte {offset}")]
    Truncated { what: &'static str, offset: u64 },
    #[error("non-zero reserved bytes in record at byte {offset}")]
    Reserved { offset: u64 },
    #[error("record {index} has timestamp {timestamp} ps, earlier than its predecessor {previous} ps")]
    Unsorted { index: u64, timestamp: u64, previous: u64 },
    #[error("channel {channel} exceeds the header channel count {n_channels}")]
    UnknownChannel { channel: u16, n_channels: u16 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum BinError {
    #[error("bin width must be positive")]
    BinWidth,
    #[error("fold span must be positive")]
    Span,
    #[error("window {window} lies outside the folded span [{span_start}, {span_end})")]
    WindowOutsideSpan { window: String, span_start: String, span_end: String },
    #[error("histograms differ in {0} and cannot be merged")]
    Incompatible(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),
    #[error("efficiency undefined at vacuum input")]
    VacuumInput,
    #[error("noise figure mu_1 requires a positive efficiency, got {0}")]
    NonPositiveEfficiency(f64),
    #[error("fidelity undefined when both mu_in and mu_1 are zero")]
    FidelityUndefined,
    #[error("{0}")]
    Domain(String),
    #[error("Poisson tail mass {tail:e} beyond N_max = {n_max} exceeds {tolerance:e}; increase N_max")]
    TailTooLarge { n_max: usize, tail: f64, tolerance: f64 },
    #[error("no noise reference: supply a vacuum run or explicit noise counts")]
    MissingNoiseReference,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("≥ {needed} points required, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all points share the same x")]
    DegenerateX,
    #[error("point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("non-decaying data (fitted lifetime {tau})")]
    NonDecaying { tau: f64 },
    #[error("no convergence after {iterations} iterations (weighted residual norm {residual_norm:e})")]
    NoConvergence { iterations: usize, residual_norm: f64 },
    #[error("singular normal matrix")]
    Singular,
}

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("averaging factor m = {m} out of range [1, {max}] for {len} samples")]
    FactorOutOfRange { m: usize, max: usize, len: usize },
    #[error("insufficient data at this tau: edf = {edf:.3} < 1")]
    InsufficientData { edf: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("gap of {gap_s:.3} s after sample {index} (cadence {tau0_s:.3} s)")]
    Gap { index: usize, gap_s: f64, tau0_s: f64 },
    #[error("confidence level must lie in (0,1), got {0}")]
    Confidence(f64),
    #[error("cannot normalize a series with zero mean")]
    ZeroMean,
}

//! Digital twin and analysis toolkit for a warm-vapor optical quantum memory.
//!
//! The crate simulates time-tagged photon-counting runs of a write / store /
//! read sequence driven by weak coherent pulses, and implements the matching
//! characterization chain: shot folding and window integration of QTT1 tag
//! files, efficiency / SNR / fidelity metrics with uncertainty propagation, the
//! classical fidelity bound for weak coherent states, exponential lifetime fits
//! and overlapping Allan deviation of long measurement campaigns.

pub mod error;
pub mod fitting;
pub mod metrics;
pub mod model;
pub mod simulator;
pub mod stability;
pub mod tagstream;
pub mod time;

pub use error::{BinError, ConfigError, ConfigViolation, FitError, MetricsError, StabilityError, TagError};
pub use model::{
    default_windows, validate_config, Calibration, DetectionWindow, ExperimentConfig, PulseSpec, SequenceTiming,
    SimTruth, Windows,
};
pub use time::Time;

//! Overlapping Allan deviation of metric time series with chi-squared
//! confidence intervals.
//!
//! For `M` samples `y_i` taken every `tau0` and an averaging factor `m`,
//!
//! ```text
//! σ²(m·tau0) = 1 / (2 m² (M − 2m + 1)) · Σ_{j=0}^{M−2m} ( Σ_{i=j}^{j+m−1} (y_{i+m} − y_i) )²
//! ```
//!
//! Deviations are absolute by default: the series are already dimensionless
//! fractions (efficiency, fidelity). [`AdevMode::Fractional`] divides by the
//! series mean first, as frequency metrology does.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::StabilityError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySeries {
    pub values: Vec<f64>,
    /// Sampling cadence in seconds.
    pub tau0_s: f64,
    /// Timestamp of the first sample, seconds.
    pub t_start_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GapPolicy {
    #[default]
    Reject,
    /// Fill missing samples by linear interpolation.
    Interpolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdevMode {
    #[default]
    Absolute,
    Fractional,
}

impl StabilitySeries {
    pub fn new(values: Vec<f64>, tau0_s: f64) -> Self {
        StabilitySeries { values, tau0_s, t_start_s: 0.0 }
    }

    /// Builds a uniform series from `(timestamp_s, value)` samples. A spacing
    /// more than half a cadence away from `tau0_s` counts as a gap.
    pub fn from_timestamped(points: &[(f64, f64)], tau0_s: f64, policy: GapPolicy) -> Result<Self, StabilityError> {
        let Some(&(t_start_s, first)) = points.first() else {
            return Ok(StabilitySeries { values: Vec::new(), tau0_s, t_start_s: 0.0 });
        };
        let mut values = vec![first];
        for (index, w) in points.windows(2).enumerate() {
            let (t0, y0) = w[0];
            let (t1, y1) = w[1];
            let dt = t1 - t0;
            let steps = (dt / tau0_s).round();
            if (dt - tau0_s).abs() > 0.5 * tau0_s {
                if policy == GapPolicy::Reject || steps < 1.0 {
                    return Err(StabilityError::Gap { index, gap_s: dt, tau0_s });
                }
                let n = steps as usize;
                for k in 1..n {
                    values.push(y0 + (y1 - y0) * k as f64 / n as f64);
                }
            }
            values.push(y1);
        }
        Ok(StabilitySeries { values, tau0_s, t_start_s })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Series divided by its mean.
    pub fn normalized(&self) -> Result<Self, StabilityError> {
        let mean = self.mean();
        if mean == 0.0 || !mean.is_finite() {
            return Err(StabilityError::ZeroMean);
        }
        Ok(StabilitySeries { values: self.values.iter().map(|v| v / mean).collect(), ..self.clone() })
    }

    fn in_mode(&self, mode: AdevMode) -> Result<std::borrow::Cow<'_, Self>, StabilityError> {
        Ok(match mode {
            AdevMode::Absolute => std::borrow::Cow::Borrowed(self),
            AdevMode::Fractional => std::borrow::Cow::Owned(self.normalized()?),
        })
    }
}

/// Largest valid averaging factor, `floor((M − 1) / 2)`.
pub fn max_factor(len: usize) -> usize {
    len.saturating_sub(1) / 2
}

/// Overlapping Allan deviation at `tau = m · tau0`.
pub fn overlapping_adev(s: &StabilitySeries, m: usize) -> Result<f64, StabilityError> {
    let len = s.values.len();
    let max = max_factor(len);
    if m < 1 || m > max {
        return Err(StabilityError::FactorOutOfRange { m, max, len });
    }
    // Prefix sums of the mean-removed series; the inner sum over i collapses to
    // P[j+2m] − 2 P[j+m] + P[j].
    let mean = s.mean();
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in &s.values {
        acc += v - mean;
        prefix.push(acc);
    }
    let terms = len - 2 * m + 1;
    let sum: f64 = (0..terms)
        .map(|j| {
            let d = prefix[j + 2 * m] - 2.0 * prefix[j + m] + prefix[j];
            d * d
        })
        .sum();
    let mf = m as f64;
    Ok((sum / (2.0 * mf * mf * terms as f64)).sqrt())
}

/// Equivalent degrees of freedom for white frequency noise:
/// `(3(M−1)/(2m) − 2(M−2)/M) · 4m² / (4m² + 5)`.
pub fn edf_white_fm(m: usize, len: usize) -> f64 {
    let (m, n) = (m as f64, len as f64);
    (3.0 * (n - 1.0) / (2.0 * m) - 2.0 * (n - 2.0) / n) * 4.0 * m * m / (4.0 * m * m + 5.0)
}

/// Two-sided chi-squared interval on the deviation at confidence `level`.
pub fn adev_confidence(sigma: f64, m: usize, len: usize, level: f64) -> Result<(f64, f64), StabilityError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StabilityError::Confidence(level));
    }
    let edf = edf_white_fm(m, len);
    if edf.is_nan() || edf < 1.0 {
        return Err(StabilityError::InsufficientData { edf });
    }
    let chi2 = ChiSquared::new(edf).expect("edf >= 1");
    let hi_q = chi2.inverse_cdf((1.0 + level) / 2.0);
    let lo_q = chi2.inverse_cdf((1.0 - level) / 2.0);
    let var = sigma * sigma;
    Ok(((var * edf / hi_q).sqrt(), (var * edf / lo_q).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TauGrid {
    /// `m = 1, 2, 4, …`, plus the largest valid `m` as an endpoint.
    #[default]
    Octave,
    /// Every `m` from 1 to the largest valid factor.
    Dense,
}

impl TauGrid {
    pub fn factors(&self, len: usize) -> Vec<usize> {
        let max = max_factor(len);
        match self {
            TauGrid::Dense => (1..=max).collect(),
            TauGrid::Octave => {
                let mut out: Vec<usize> = std::iter::successors(Some(1usize), |m| m.checked_mul(2))
                    .take_while(|&m| m <= max)
                    .collect();
                if max >= 1 && out.last() != Some(&max) {
                    out.push(max);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdevPoint {
    pub m: usize,
    pub tau_s: f64,
    pub adev: f64,
    pub edf: f64,
    /// `None` where the edf falls below one.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub grid: TauGrid,
    pub mode: AdevMode,
    /// Two-sided confidence of the error bars; 0.683 is one standard deviation.
    pub confidence: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions { grid: TauGrid::Octave, mode: AdevMode::Absolute, confidence: 0.683 }
    }
}

/// Deviation with confidence interval on the chosen `tau` grid. Needs at least 8 samples.
pub fn adev_curve(s: &StabilitySeries, opts: &CurveOptions) -> Result<Vec<AdevPoint>, StabilityError> {
    if s.len() < 8 {
        return Err(StabilityError::TooShort { needed: 8, got: s.len() });
    }
    let series = s.in_mode(opts.mode)?;
    opts.grid
        .factors(s.len())
        .into_iter()
        .map(|m| {
            let adev = overlapping_adev(&series, m)?;
            let ci = match adev_confidence(adev, m, s.len(), opts.confidence) {
                Ok(ci) => Some(ci),
                Err(StabilityError::InsufficientData { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(AdevPoint {
                m,
                tau_s: m as f64 * s.tau0_s,
                adev,
                edf: edf_white_fm(m, s.len()),
                ci_low: ci.map(|c| c.0),
                ci_high: ci.map(|c| c.1),
            })
        })
        .collect()
}

/// Deviation at the `m` closest to `tau_s`, in the given mode.
pub fn adev_at(s: &StabilitySeries, tau_s: f64, mode: AdevMode) -> Result<(usize, f64), StabilityError> {
    let m = ((tau_s / s.tau0_s).round() as usize).max(1);
    let series = s.in_mode(mode)?;
    Ok((m, overlapping_adev(&series, m)?))
}

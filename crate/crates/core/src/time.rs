//! Integer-picosecond time.
//!
//! Every timestamp, duration and window bound in the crate is an `i64` count of
//! picoseconds. A 28 h campaign is about 1e17 ps, well inside the `i64` range,
//! and the 5 ps histogram bins are represented exactly.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

pub const PS_PER_NS: i64 = 1_000;
pub const PS_PER_US: i64 = 1_000_000;
pub const PS_PER_MS: i64 = 1_000_000_000;
pub const PS_PER_S: i64 = 1_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Time(pub i64);

impl Time {
    pub const ZERO: Time = Time(0);

    pub const fn ps(ps: i64) -> Time {
        Time(ps)
    }

    pub const fn ns(ns: i64) -> Time {
        Time(ns * PS_PER_NS)
    }

    pub const fn us(us: i64) -> Time {
        Time(us * PS_PER_US)
    }

    pub const fn secs(s: i64) -> Time {
        Time(s * PS_PER_S)
    }

    /// Rounds a value given in `unit_ps` picoseconds per unit to the nearest picosecond.
    pub fn from_f64(value: f64, unit_ps: i64) -> Time {
        Time((value * unit_ps as f64).round() as i64)
    }

    pub fn from_ns_f64(ns: f64) -> Time {
        Time::from_f64(ns, PS_PER_NS)
    }

    pub fn from_us_f64(us: f64) -> Time {
        Time::from_f64(us, PS_PER_US)
    }

    pub fn from_secs_f64(s: f64) -> Time {
        Time::from_f64(s, PS_PER_S)
    }

    pub const fn as_ps(self) -> i64 {
        self.0
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / PS_PER_NS as f64
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / PS_PER_US as f64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / PS_PER_S as f64
    }

    /// Scales by a real factor, rounding to the nearest picosecond.
    pub fn scale(self, k: f64) -> Time {
        Time((self.0 as f64 * k).round() as i64)
    }
}

impl Add for Time {
    type Output = Time;
    fn add(self, rhs: Time) -> Time {
        Time(self.0 + rhs.0)
    }
}

impl AddAssign for Time {
    fn add_assign(&mut self, rhs: Time) {
        self.0 += rhs.0;
    }
}

impl Sub for Time {
    type Output = Time;
    fn sub(self, rhs: Time) -> Time {
        Time(self.0 - rhs.0)
    }
}

impl Neg for Time {
    type Output = Time;
    fn neg(self) -> Time {
        Time(-self.0)
    }
}

impl Mul<i64> for Time {
    type Output = Time;
    fn mul(self, rhs: i64) -> Time {
        Time(self.0 * rhs)
    }
}

impl Div<i64> for Time {
    type Output = Time;
    fn div(self, rhs: i64) -> Time {
        Time(self.0 / rhs)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ps = self.0.abs();
        let sign = if self.0 < 0 { "-" } else { "" };
        if ps >= PS_PER_S {
            write!(f, "{sign}{} s", ps as f64 / PS_PER_S as f64)
        } else if ps >= PS_PER_US {
            write!(f, "{sign}{} us", ps as f64 / PS_PER_US as f64)
        } else if ps >= PS_PER_NS {
            write!(f, "{sign}{} ns", ps as f64 / PS_PER_NS as f64)
        } else {
            write!(f, "{sign}{ps} ps")
        }
    }
}

/// Serde adapters that store a [`Time`] as a float in a fixed unit, so config
/// files can carry the unit in the field name (`"signal_fwhm_ns": 10`).
macro_rules! unit_serde {
    ($name:ident, $unit:expr) => {
        pub mod $name {
            use crate::time::Time;
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(t: &Time, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_f64(t.0 as f64 / $unit as f64)
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Time, D::Error> {
                let v = f64::deserialize(d)?;
                if !v.is_finite() {
                    return Err(serde::de::Error::custom("time must be finite"));
                }
                Ok(Time::from_f64(v, $unit))
            }
        }
    };
}

pub mod serde_units {
    unit_serde!(ns, crate::time::PS_PER_NS);
    unit_serde!(us, crate::time::PS_PER_US);
    unit_serde!(ms, crate::time::PS_PER_MS);
    unit_serde!(secs, crate::time::PS_PER_S);
}

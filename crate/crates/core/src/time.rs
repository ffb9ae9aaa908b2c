//! Simulation clock. Integer nanoseconds; configuration is expressed in µs.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    /// Rounds to the nearest nanosecond. Negative or NaN inputs map to zero.
    pub fn from_us_f64(us: f64) -> Self {
        if us.is_nan() || us <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime((us * 1_000.0).round() as u64)
    }

    pub const fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

/// Decimal microseconds with three fractional digits, e.g. `2269.000`.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1_000, self.0 % 1_000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(SimTime::from_us(621).nanos(), 621_000);
        assert_eq!(SimTime::from_us_f64(1.382).nanos(), 1_382);
        assert_eq!(SimTime::from_us_f64(0.7814).nanos(), 781);
        assert_eq!(SimTime::from_us_f64(-3.0), SimTime::ZERO);
        assert_eq!(SimTime(2_269_000).to_string(), "2269.000");
        assert_eq!(SimTime(1_382).to_string(), "1.382");
    }
}

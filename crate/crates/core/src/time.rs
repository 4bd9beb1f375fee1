//! Fixed-point simulation time.

use core::fmt;
use core::ops::{Add, AddAssign, Mul, Sub};

/// Ticks per microsecond. One tick is 0.01 μs.
pub const TICKS_PER_MICRO: u64 = 100;

/// A point in (or span of) simulated time, counted in 0.01 μs ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// The smallest representable span.
    pub const TICK: SimTime = SimTime(1);

    pub const fn from_ticks(ticks: u64) -> Self {
        SimTime(ticks)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * TICKS_PER_MICRO)
    }

    /// Rounds to the nearest tick. Negative and non-finite inputs are rejected.
    pub fn from_micros_f64(us: f64) -> Option<Self> {
        if !us.is_finite() || us < 0.0 {
            return None;
        }
        let ticks = libm::round(us * TICKS_PER_MICRO as f64);
        if ticks > u64::MAX as f64 {
            return None;
        }
        Some(SimTime(ticks as u64))
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_MICRO as f64
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

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0 * rhs)
    }
}

/// Prints microseconds with exactly two decimals, e.g. `766.00`.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / TICKS_PER_MICRO, self.0 % TICKS_PER_MICRO)
    }
}

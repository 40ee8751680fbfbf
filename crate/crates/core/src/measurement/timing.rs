//! Time-savings comparison between automated and manual runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimingError {
    #[error("interval bounds must be positive and finite")]
    NonPositive,
    #[error("interval lower bound exceeds upper bound")]
    Inverted,
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Result<Self, TimingError> {
        if !(lo > T::zero() && hi > T::zero() && lo.is_finite() && hi.is_finite()) {
            return Err(TimingError::NonPositive);
        }
        if lo > hi {
            return Err(TimingError::Inverted);
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: T) -> Result<Self, TimingError> {
        Self::new(v, v)
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Percentage of manual time saved, as an integer-percent interval: the
/// worst case pairs the slowest automated run with the fastest manual one.
pub fn timing_savings<T: Real>(auto: Interval<T>, manual: Interval<T>) -> Interval<i64> {
    let hundred: T = lit(100.0);
    let pct = |saved: T, base: T| (hundred * saved / base).round().to_i64().unwrap_or(0);
    Interval {
        lo: pct(manual.lo - auto.hi, manual.lo),
        hi: pct(manual.hi - auto.lo, manual.hi),
    }
}

//! Scalar abstraction for the evaluation math.
//!
//! Metrics, probability vectors and fusion are written once against
//! [`Scalar`] and instantiated for `f32`, `f64` and the exact rational type
//! [`Exact`]. The rational instantiation lets tests compare two independent
//! computations for exact equality instead of within a tolerance.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Exact rational scalar (`i64` numerator and denominator).
pub type Exact = Ratio<i64>;

/// Numeric type usable for scores, ratios and probabilities.
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// Converts a non-negative count.
    fn from_count(n: u64) -> Self;

    /// Converts from a real number; rationals use a best approximation.
    fn from_real(x: f64) -> Self;

    /// Lossy conversion for reporting.
    fn as_f64(self) -> f64;

    /// `num / den` where both are counts. `den` must be non-zero.
    fn ratio(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn is_finite_value(self) -> bool {
        true
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn abs_value(self) -> Self {
        if self < Self::zero() {
            Self::zero() - self
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
    fn from_real(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Exact {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(n as i64)
    }
    fn from_real(x: f64) -> Self {
        Ratio::approximate_float(x).unwrap_or_else(|| Ratio::from_integer(0))
    }
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

/// Rounds a non-negative real to the nearest integer, halves upward.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Clamps and rounds a real pixel value into `u8`.
#[inline]
pub fn to_u8(x: f64) -> u8 {
    round_half_up(x).clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_exact_for_rationals() {
        let third = Exact::ratio(1, 3);
        assert_eq!(third * Exact::from_count(3), Exact::from_count(1));
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(round_half_up(76.5), 77.0);
        assert_eq!(round_half_up(76.245), 76.0);
        assert_eq!(to_u8(300.0), 255);
        assert_eq!(to_u8(-3.0), 0);
    }

    #[test]
    fn max_min_helpers() {
        assert_eq!(2.0f64.max_of(3.0), 3.0);
        assert_eq!(Exact::ratio(1, 2).min_of(Exact::ratio(1, 3)), Exact::ratio(1, 3));
        assert_eq!((-2.5f32).abs_value(), 2.5);
    }
}

//! Scalar abstraction shared by the analytic parts of the crate.
//!
//! Rate profiles, size histograms, selectivity propagation and the planner
//! are written against [`Scalar`] so that the same code runs in `f32`,
//! `f64`, or exact rational arithmetic ([`Exact`]). The runtime pieces
//! (generator, engine, metrics) use the `f64` aliases exported at the
//! crate root.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Exact rational scalar. Configuration values are read as decimals with up
/// to nine fractional digits, so `0.98` becomes `49/50`.
pub type Exact = Ratio<i64>;

/// Numeric type usable by the analytic routines.
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// Converts an `f64` configuration value. Exact types round to nine
    /// decimal places first.
    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// Smallest integer not below `self`. Floating types treat values within
    /// a relative `1e-9` of an integer as that integer, so `15.000000000000002`
    /// rounds to 15.
    fn ceil_u64(self) -> u64;

    fn from_u64(v: u64) -> Self {
        Self::from_f64(v as f64)
    }

    /// `true` when `|self - other| <= tol` after conversion to `f64`.
    fn approx_eq(self, other: Self, tol: f64) -> bool {
        (self.to_f64() - other.to_f64()).abs() <= tol
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

macro_rules! impl_float_scalar {
    ($f:ty) => {
        impl Scalar for $f {
            fn from_f64(v: f64) -> Self {
                v as $f
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn ceil_u64(self) -> u64 {
                if self <= 0.0 {
                    return 0;
                }
                let nearest = self.round();
                let tol = 1e-9 * nearest.abs().max(1.0) as f64;
                if ((self - nearest).abs() as f64) <= tol {
                    nearest as u64
                } else {
                    self.ceil() as u64
                }
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

impl Scalar for Exact {
    fn from_f64(v: f64) -> Self {
        const SCALE: f64 = 1e9;
        let scaled = (v * SCALE).round();
        if scaled.abs() < i64::MAX as f64 {
            Ratio::new(scaled as i64, SCALE as i64)
        } else {
            Ratio::approximate_float(v).unwrap_or_else(|| panic!("value {v} has no rational approximation"))
        }
    }

    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn from_u64(v: u64) -> Self {
        Ratio::from_integer(v as i64)
    }

    fn ceil_u64(self) -> u64 {
        let c = self.ceil().to_integer();
        if c <= 0 {
            0
        } else {
            c as u64
        }
    }

    fn approx_eq(self, other: Self, tol: f64) -> bool {
        self == other || (Scalar::to_f64(self) - Scalar::to_f64(other)).abs() <= tol
    }
}

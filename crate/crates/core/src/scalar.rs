//! Floating-point element type shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by tensors, the model and the objectives.
///
/// Implemented for `f32` and `f64`. Training, gradient checks and the
/// checkpoint format assume `f64`; `f32` is available for cheap inference.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding if the type is narrower.
    fn lit(value: f64) -> Self;

    /// Widens to `f64` for reporting and serialization.
    fn to_f64_lossless(self) -> f64;

    /// `ln(1 + e^x)` without overflow for large `x`.
    fn softplus(self) -> Self {
        let zero = Self::zero();
        self.max(zero) + (-self.abs()).exp().ln_1p()
    }

    /// `ln σ(x)`, evaluated as `-softplus(-x)`.
    fn log_sigmoid(self) -> Self {
        -(-self).softplus()
    }

    /// Logistic function, stable for both tails.
    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(value: f64) -> Self {
        value
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

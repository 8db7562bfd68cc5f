//! Scalar abstraction: the numeric kernels are generic over `f32`/`f64`.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable in every numeric kernel of the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand conversion from `f64` literals.
    fn f(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    /// Lossy view as `f64` (exact for f32/f64 values).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("to f64")
    }

    fn half() -> Self {
        Self::f(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic sigmoid.
pub fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// Clamp a probability into `[eps, 1 - eps]` so logs stay finite.
pub fn clamp_prob<F: Scalar>(p: F, eps: F) -> F {
    p.max(eps).min(F::one() - eps)
}

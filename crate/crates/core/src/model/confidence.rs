//! Model confidence: deviation of sigmoid outputs from maximum
//! uncertainty.

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Batch confidence: `sum over x of |f(x) - 0.5|`.
///
/// Scores must already be sigmoid outputs in `[0, 1]`.
pub fn confidence<F: Scalar>(scores: &[F]) -> Result<F> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("confidence scores".into()));
    }
    let half = F::half();
    let mut acc = F::zero();
    for &s in scores {
        if s < F::zero() || s > F::one() {
            return Err(Error::invalid("scores", format!("{s} outside [0, 1]")));
        }
        acc += (s - half).abs();
    }
    Ok(acc)
}

/// Mean variant used for plotting: `confidence(scores) / |scores|`.
pub fn confidence_mean<F: Scalar>(scores: &[F]) -> Result<F> {
    Ok(confidence(scores)? / F::f(scores.len() as f64))
}

//! Paired t-tests with Bonferroni correction over cross-validation folds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Outcome of a paired t-test.
///
/// With zero variance of the paired differences the t statistic is
/// undefined: an all-zero difference vector reports `t = 0, p = 1`; a
/// non-zero constant difference is flagged `degenerate` (trivially
/// significant) and carries no numeric p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: Option<f64>,
    pub p_raw: Option<f64>,
    /// Bonferroni-corrected p: `min(1, p_raw * n_comparisons)`.
    pub p_corrected: Option<f64>,
    pub significant_at_005: bool,
    pub degenerate: bool,
}

/// Two-sided paired t-test between per-fold metric vectors `a` and `b`,
/// Bonferroni-corrected for `n_comparisons` tests.
pub fn paired_ttest(a: &[f64], b: &[f64], n_comparisons: usize) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "paired_ttest",
            format!("{} vs {} folds", a.len(), b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(Error::invalid(
            "folds",
            format!("paired t-test needs at least 2 folds, got {}", a.len()),
        ));
    }
    if n_comparisons == 0 {
        return Err(Error::invalid("n_comparisons", "must be at least 1"));
    }

    let k = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / k;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0);

    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTestResult {
                t: Some(0.0),
                p_raw: Some(1.0),
                p_corrected: Some(1.0),
                significant_at_005: false,
                degenerate: false,
            });
        }
        return Ok(TTestResult {
            t: None,
            p_raw: None,
            p_corrected: None,
            significant_at_005: true,
            degenerate: true,
        });
    }

    let se = (var / k).sqrt();
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, k - 1.0).expect("valid dof");
    let p_raw = 2.0 * (1.0 - dist.cdf(t.abs()));
    let p_corrected = (p_raw * n_comparisons as f64).min(1.0);
    Ok(TTestResult {
        t: Some(t),
        p_raw: Some(p_raw),
        p_corrected: Some(p_corrected),
        significant_at_005: p_corrected < 0.05,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equal_vectors_not_significant() {
        let a = [0.4, 0.5, 0.6, 0.55];
        let r = paired_ttest(&a, &a, 1).unwrap();
        assert_eq!(r.t, Some(0.0));
        assert_eq!(r.p_raw, Some(1.0));
        assert!(!r.significant_at_005);
        assert!(!r.degenerate);
    }

    #[test]
    fn matches_reference_oracle_values() {
        // scipy.stats.ttest_rel fixtures
        let d = [0.1, 0.12, 0.09, 0.11, 0.1];
        let zeros = [0.0; 5];
        let r = paired_ttest(&d, &zeros, 1).unwrap();
        assert_abs_diff_eq!(r.t.unwrap(), 20.39607805437114, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_raw.unwrap(), 3.4122167303144025e-05, epsilon = 1e-10);
        assert!(r.p_raw.unwrap() < 0.001);

        let a2 = [0.52, 0.61, 0.47, 0.55, 0.58];
        let b2 = [0.49, 0.57, 0.50, 0.51, 0.53];
        let r2 = paired_ttest(&a2, &b2, 1).unwrap();
        assert_abs_diff_eq!(r2.t.unwrap(), 1.8115058371582056, epsilon = 1e-9);
        assert_abs_diff_eq!(r2.p_raw.unwrap(), 0.14429445285927506, epsilon = 1e-9);
        assert!(!r2.significant_at_005);
    }

    #[test]
    fn bonferroni_triples_and_caps() {
        let a = [0.52, 0.61, 0.47, 0.55, 0.58];
        let b = [0.49, 0.57, 0.50, 0.51, 0.53];
        let r1 = paired_ttest(&a, &b, 1).unwrap();
        let r3 = paired_ttest(&a, &b, 3).unwrap();
        assert_abs_diff_eq!(
            r3.p_corrected.unwrap(),
            (3.0 * r1.p_raw.unwrap()).min(1.0),
            epsilon = 1e-12
        );
        let r99 = paired_ttest(&a, &b, 99).unwrap();
        assert_eq!(r99.p_corrected, Some(1.0));
        assert!(r99.p_corrected >= r99.p_raw);
    }

    #[test]
    fn constant_nonzero_difference_is_degenerate() {
        let a = [0.5, 0.6, 0.7];
        let b = [0.4, 0.5, 0.6];
        let r = paired_ttest(&a, &b, 1).unwrap();
        assert!(r.degenerate);
        assert!(r.significant_at_005);
        assert_eq!(r.p_raw, None);
    }

    #[test]
    fn short_or_mismatched_input_errors() {
        assert!(paired_ttest(&[1.0], &[1.0], 1).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[1.0], 1).is_err());
    }
}

//! Area under the ROC curve via the rank-based Mann-Whitney statistic.

use crate::error::{Error, Result};
use crate::num::Scalar;

/// AUC: the probability that a uniformly random positive sample receives a
/// higher score than a uniformly random negative one, with ties counted as
/// one half. Computed from tie-averaged ranks in `O(n log n)`.
///
/// Errors when the inputs are empty, mismatched, or contain only one class.
pub fn auc<F: Scalar>(scores: &[F], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("auc scores".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "auc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateMetric(format!(
            "auc needs both classes; got {n_pos} positives, {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Tie-averaged ranks (1-based).
    let mut ranks = vec![0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let n_pos_f = n_pos as f64;
    let u = rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive pairwise oracle: mean over all positive-negative pairs of
    /// (1 if pos > neg, 0.5 if tie, 0 otherwise).
    fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
            for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
                pairs += 1;
                if sp > sn {
                    total += 1.0;
                } else if sp == sn {
                    total += 0.5;
                }
            }
        }
        total / pairs as f64
    }

    #[test]
    fn perfectly_separated_is_one() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [0, 0, 1, 1];
        assert_abs_diff_eq!(auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn four_point_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0, 0, 1, 1];
        // brute force over the 4 positive-negative pairs: (.35>.1)+(.8>.1)+(.8>.4)=3 of 4
        assert_abs_diff_eq!(auc(&scores, &labels).unwrap(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(
            auc_bruteforce(&scores, &labels),
            0.75,
            epsilon = 1e-12
        );
    }

    #[test]
    fn all_equal_scores_is_half() {
        let scores = [0.3; 6];
        let labels = [0, 1, 0, 1, 0, 1];
        assert_abs_diff_eq!(auc(&scores, &labels).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_class_errors() {
        let scores = [0.1, 0.2];
        assert!(auc(&scores, &[1, 1]).is_err());
        assert!(auc(&scores, &[0, 0]).is_err());
        assert!(auc::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..200 {
            let n = rng.random_range(2..=50);
            let mut scores: Vec<f64> = Vec::with_capacity(n);
            let mut labels: Vec<u8> = Vec::with_capacity(n);
            for _ in 0..n {
                // coarse grid so ties actually occur
                scores.push((rng.random_range(0..20) as f64) / 20.0);
                labels.push(rng.random_range(0..2) as u8);
            }
            // ensure both classes present
            labels[0] = 0;
            labels[n - 1] = 1;
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_bruteforce(&scores, &labels);
            assert!(
                (fast - slow).abs() < 1e-9,
                "case {case}: {fast} vs oracle {slow}"
            );
        }
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (5.0 * s).exp()).collect();
        assert_abs_diff_eq!(auc(&squashed, &labels).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn reversed_labels_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // distinct scores, so no ties
        let scores: Vec<f64> = (0..30).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        let labels: Vec<u8> = (0..30).map(|_| rng.random_range(0..2) as u8).collect();
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&scores, &flipped).unwrap();
        assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-12);
    }
}

//! Bias-group assignment and true-positive-rate disparity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Evaluation group of one sample with respect to one shortcut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    /// (label, shortcut presence) matches the correlation seen in training.
    BiasAligned,
    /// (label, shortcut presence) opposes the training correlation.
    BiasContrasting,
}

/// Assign a sample to its bias group for the named shortcut.
///
/// A sample is aligned iff `(label == target_class) == flag`: shortcut
/// present on the correlated class, or absent on the other class.
pub fn group_assign(
    label: u8,
    flags: &BTreeMap<String, bool>,
    shortcut_name: &str,
    target_class: u8,
) -> Result<Group> {
    let flag = *flags.get(shortcut_name).ok_or_else(|| {
        Error::invalid(
            "shortcut_flags",
            format!("no flag `{shortcut_name}` on sample"),
        )
    })?;
    if (label == target_class) == flag {
        Ok(Group::BiasAligned)
    } else {
        Ok(Group::BiasContrasting)
    }
}

/// Per-group TPRs and their absolute difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprBreakdown {
    pub tpr_aligned: f64,
    pub tpr_contrasting: f64,
    pub delta: f64,
}

/// TPR per bias group over the positive samples, at a fixed threshold
/// (default 0.5), and the absolute disparity between the groups.
///
/// Errors if either group contains no positive sample.
pub fn delta_tpr<F: Scalar>(
    predictions: &[F],
    labels: &[u8],
    groups: &[Group],
    threshold: F,
) -> Result<TprBreakdown> {
    if predictions.len() != labels.len() || labels.len() != groups.len() {
        return Err(Error::shape(
            "delta_tpr",
            format!(
                "{} predictions, {} labels, {} groups",
                predictions.len(),
                labels.len(),
                groups.len()
            ),
        ));
    }
    let mut pos = [0usize; 2];
    let mut hit = [0usize; 2];
    for ((&p, &l), &g) in predictions.iter().zip(labels).zip(groups) {
        if l != 1 {
            continue;
        }
        let gi = match g {
            Group::BiasAligned => 0,
            Group::BiasContrasting => 1,
        };
        pos[gi] += 1;
        if p >= threshold {
            hit[gi] += 1;
        }
    }
    for (gi, name) in [(0usize, "bias_aligned"), (1, "bias_contrasting")] {
        if pos[gi] == 0 {
            return Err(Error::DegenerateMetric(format!(
                "group {name} has no positive samples"
            )));
        }
    }
    let tpr_aligned = hit[0] as f64 / pos[0] as f64;
    let tpr_contrasting = hit[1] as f64 / pos[1] as f64;
    Ok(TprBreakdown {
        tpr_aligned,
        tpr_contrasting,
        delta: (tpr_aligned - tpr_contrasting).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flags(name: &str, val: bool) -> BTreeMap<String, bool> {
        let mut m = BTreeMap::new();
        m.insert(name.to_string(), val);
        m
    }

    #[test]
    fn assignment_matches_correlation() {
        let f = flags("square", true);
        assert_eq!(group_assign(1, &f, "square", 1).unwrap(), Group::BiasAligned);
        let f = flags("square", false);
        assert_eq!(group_assign(0, &f, "square", 1).unwrap(), Group::BiasAligned);
        assert_eq!(
            group_assign(1, &f, "square", 1).unwrap(),
            Group::BiasContrasting
        );
    }

    #[test]
    fn missing_flag_errors() {
        let f = flags("square", true);
        assert!(group_assign(1, &f, "noise", 1).is_err());
    }

    #[test]
    fn counting_example() {
        // aligned positives predicted [1,1,0,1], contrasting [1,0,0,1]
        let predictions = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let labels = [1u8; 8];
        let groups = [
            Group::BiasAligned,
            Group::BiasAligned,
            Group::BiasAligned,
            Group::BiasAligned,
            Group::BiasContrasting,
            Group::BiasContrasting,
            Group::BiasContrasting,
            Group::BiasContrasting,
        ];
        let b = delta_tpr(&predictions, &labels, &groups, 0.5).unwrap();
        assert_abs_diff_eq!(b.tpr_aligned, 0.75);
        assert_abs_diff_eq!(b.tpr_contrasting, 0.50);
        assert_abs_diff_eq!(b.delta, 0.25);
    }

    #[test]
    fn identical_predictions_zero_delta() {
        let predictions = [0.9, 0.9, 0.9, 0.9];
        let labels = [1u8; 4];
        let groups = [
            Group::BiasAligned,
            Group::BiasContrasting,
            Group::BiasAligned,
            Group::BiasContrasting,
        ];
        let b = delta_tpr(&predictions, &labels, &groups, 0.5).unwrap();
        assert_abs_diff_eq!(b.delta, 0.0);
    }

    #[test]
    fn group_without_positives_errors() {
        let predictions = [0.9, 0.1];
        let labels = [1u8, 0];
        let groups = [Group::BiasAligned, Group::BiasContrasting];
        let err = delta_tpr(&predictions, &labels, &groups, 0.5).unwrap_err();
        assert!(err.to_string().contains("bias_contrasting"));
    }

    #[test]
    fn swap_symmetric_and_bounded() {
        let predictions = [0.8, 0.2, 0.7, 0.4, 0.9, 0.1];
        let labels = [1u8; 6];
        let groups = [
            Group::BiasAligned,
            Group::BiasAligned,
            Group::BiasContrasting,
            Group::BiasContrasting,
            Group::BiasAligned,
            Group::BiasContrasting,
        ];
        let swapped: Vec<Group> = groups
            .iter()
            .map(|g| match g {
                Group::BiasAligned => Group::BiasContrasting,
                Group::BiasContrasting => Group::BiasAligned,
            })
            .collect();
        let a = delta_tpr(&predictions, &labels, &groups, 0.5).unwrap();
        let b = delta_tpr(&predictions, &labels, &swapped, 0.5).unwrap();
        assert_abs_diff_eq!(a.delta, b.delta);
        assert!((0.0..=1.0).contains(&a.delta));
    }
}

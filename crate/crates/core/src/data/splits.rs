//! Split construction: teacher/student partition, fold re-splitting, and
//! policy-driven shortcut injection.

use rand::seq::SliceRandom;

use super::shortcut::{assign_shortcut_mask, inject_shortcut, marked_count, MaskRule};
use super::{generate_base_dataset, DatasetManifest, ImageSample, Split, SplitPolicy};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::seed::{derive_seed, rng_for};

/// The four materialized splits of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle<F> {
    /// Curated subset the specialist teacher trains on; id-disjoint from
    /// `student_train`.
    pub teacher_train: Vec<ImageSample<F>>,
    pub student_train: Vec<ImageSample<F>>,
    pub val: Vec<ImageSample<F>>,
    pub test: Vec<ImageSample<F>>,
}

/// One fold of a k-fold re-split of the pooled train+val samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldSpec {
    pub k: usize,
    pub index: usize,
}

/// Split-construction options beyond the manifest.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplitOptions {
    /// Skip injection on the student training split (the clean baseline).
    /// Validation and test are unaffected.
    pub clean_student_train: bool,
    /// Re-split the pooled train+val stratified by class; the test split
    /// is identical across folds.
    pub fold: Option<FoldSpec>,
}

/// Build the teacher/student/val/test splits with default options.
pub fn build_splits<F: Scalar>(manifest: &DatasetManifest) -> Result<SplitBundle<F>> {
    build_splits_opts(manifest, SplitOptions::default())
}

/// Build the splits.
///
/// The teacher subset is drawn class-balanced from the (fold) training
/// split before any injection. Shortcuts reach the teacher subset only
/// through `teacher_contamination`, applied to target-class samples only.
/// Under `SamePrevalenceAllSplits`, validation and test carry the training
/// prevalence; otherwise they are balanced (half of each class marked).
pub fn build_splits_opts<F: Scalar>(
    manifest: &DatasetManifest,
    opts: SplitOptions,
) -> Result<SplitBundle<F>> {
    manifest.validate()?;
    if let Some(f) = opts.fold {
        if f.k < 2 || f.index >= f.k {
            return Err(Error::invalid(
                "fold",
                format!("fold {}/{} out of range", f.index, f.k),
            ));
        }
    }
    let base = generate_base_dataset::<F>(manifest)?;

    let mut train: Vec<ImageSample<F>> = Vec::new();
    let mut val: Vec<ImageSample<F>> = Vec::new();
    let mut test: Vec<ImageSample<F>> = Vec::new();
    match opts.fold {
        None => {
            for s in base {
                match s.split {
                    Split::Train => train.push(s),
                    Split::Val => val.push(s),
                    Split::Test => test.push(s),
                }
            }
        }
        Some(fold) => {
            // pool train+val, stratified re-split; test untouched
            let mut pool: Vec<ImageSample<F>> = Vec::new();
            for s in base {
                match s.split {
                    Split::Test => test.push(s),
                    _ => pool.push(s),
                }
            }
            for label in [0u8, 1u8] {
                let mut cls: Vec<ImageSample<F>> =
                    pool.iter().filter(|s| s.label == label).cloned().collect();
                let mut rng = rng_for(manifest.seed, &["folds", &format!("c{label}")]);
                cls.shuffle(&mut rng);
                let n = cls.len();
                let base_sz = n / fold.k;
                let extra = n % fold.k;
                let start: usize = (0..fold.index)
                    .map(|i| base_sz + usize::from(i < extra))
                    .sum();
                let len = base_sz + usize::from(fold.index < extra);
                for (i, mut s) in cls.into_iter().enumerate() {
                    if i >= start && i < start + len {
                        s.split = Split::Val;
                        val.push(s);
                    } else {
                        s.split = Split::Train;
                        train.push(s);
                    }
                }
            }
        }
    }

    // teacher subset: class-balanced draw from the training split
    let fold_tag = opts
        .fold
        .map(|f| format!("-f{}", f.index))
        .unwrap_or_default();
    let mut teacher_pick = vec![false; train.len()];
    for label in [0u8, 1u8] {
        let idx: Vec<usize> = (0..train.len()).filter(|&i| train[i].label == label).collect();
        let k = marked_count(manifest.teacher_subset_fraction, idx.len());
        let mut rng = rng_for(
            manifest.seed,
            &["teacher-subset", &format!("c{label}{fold_tag}")],
        );
        for pos in rand::seq::index::sample(&mut rng, idx.len(), k) {
            teacher_pick[idx[pos]] = true;
        }
    }
    let mut teacher_train: Vec<ImageSample<F>> = Vec::new();
    let mut student_train: Vec<ImageSample<F>> = Vec::new();
    for (picked, s) in teacher_pick.iter().zip(train) {
        if *picked {
            teacher_train.push(s);
        } else {
            student_train.push(s);
        }
    }
    if teacher_train
        .iter()
        .any(|t| student_train.iter().any(|s| s.id == t.id))
    {
        return Err(Error::invalid(
            "teacher_subset",
            "overlap between teacher and student ids",
        ));
    }

    // injection
    let eval_rule = match manifest.split_policy {
        SplitPolicy::CorrelatedTrainBalancedEval => MaskRule::Balanced,
        SplitPolicy::SamePrevalenceAllSplits => MaskRule::Correlated,
    };
    for spec in &manifest.shortcuts {
        let mut plan: Vec<(&mut Vec<ImageSample<F>>, MaskRule, String)> = Vec::new();
        if !opts.clean_student_train {
            plan.push((
                &mut student_train,
                MaskRule::Correlated,
                format!("student-train{fold_tag}"),
            ));
        }
        if manifest.teacher_contamination > 0.0 {
            plan.push((
                &mut teacher_train,
                MaskRule::TargetOnly {
                    rate: manifest.teacher_contamination,
                },
                format!("teacher-train{fold_tag}"),
            ));
        }
        plan.push((&mut val, eval_rule, format!("val{fold_tag}")));
        plan.push((&mut test, eval_rule, "test".to_string()));

        for (samples, rule, tag) in plan {
            if samples.is_empty() {
                continue;
            }
            let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
            let mask_seed = derive_seed(manifest.seed, &["mask", &tag, &spec.name]);
            let mask = assign_shortcut_mask(&labels, spec, rule, mask_seed)?;
            for (s, marked) in samples.iter_mut().zip(mask) {
                if marked {
                    let inj_seed = derive_seed(manifest.seed, &["inject", &s.id, &spec.name]);
                    *s = inject_shortcut(s, spec, inj_seed)?;
                }
            }
        }
    }

    Ok(SplitBundle {
        teacher_train,
        student_train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassSignal, ShortcutKind, ShortcutSpec, SplitCounts};
    use std::collections::BTreeSet;

    fn manifest(shortcuts: Vec<ShortcutSpec>) -> DatasetManifest {
        DatasetManifest {
            seed: 11,
            image_side: 16,
            n_per_class: SplitCounts {
                train: 500,
                val: 50,
                test: 50,
            },
            class_signal: ClassSignal::default(),
            shortcuts,
            split_policy: SplitPolicy::CorrelatedTrainBalancedEval,
            teacher_subset_fraction: 0.2,
            teacher_contamination: 0.0,
        }
    }

    fn noise(prevalence: f64) -> ShortcutSpec {
        ShortcutSpec {
            name: "noise".into(),
            kind: ShortcutKind::DiffuseNoise,
            amplitude: 0.15,
            square_side: None,
            position: None,
            target_class: 1,
            prevalence,
        }
    }

    fn flag_count(samples: &[ImageSample<f32>], name: &str, label: u8) -> usize {
        samples
            .iter()
            .filter(|s| s.label == label && s.shortcut_flags[name])
            .count()
    }

    #[test]
    fn teacher_partition_is_disjoint() {
        let b: SplitBundle<f32> = build_splits(&manifest(vec![])).unwrap();
        assert_eq!(b.teacher_train.len(), 200);
        assert_eq!(b.student_train.len(), 800);
        let teacher_ids: BTreeSet<_> = b.teacher_train.iter().map(|s| &s.id).collect();
        assert!(b.student_train.iter().all(|s| !teacher_ids.contains(&s.id)));
        // class-balanced teacher subset
        assert_eq!(b.teacher_train.iter().filter(|s| s.label == 1).count(), 100);
    }

    #[test]
    fn contamination_hits_positive_teacher_samples_only() {
        let mut m = manifest(vec![noise(1.0)]);
        m.teacher_contamination = 0.10;
        let b: SplitBundle<f32> = build_splits(&m).unwrap();
        assert_eq!(flag_count(&b.teacher_train, "noise", 1), 10);
        assert_eq!(flag_count(&b.teacher_train, "noise", 0), 0);
    }

    #[test]
    fn clean_teacher_under_default_contamination() {
        let b: SplitBundle<f32> = build_splits(&manifest(vec![noise(1.0)])).unwrap();
        assert_eq!(flag_count(&b.teacher_train, "noise", 1), 0);
        assert_eq!(flag_count(&b.teacher_train, "noise", 0), 0);
        // student training split fully correlated
        assert_eq!(flag_count(&b.student_train, "noise", 1), 400);
        assert_eq!(flag_count(&b.student_train, "noise", 0), 0);
    }

    #[test]
    fn eval_splits_balanced_under_default_policy() {
        let b: SplitBundle<f32> = build_splits(&manifest(vec![noise(1.0)])).unwrap();
        for split in [&b.val, &b.test] {
            for label in [0, 1] {
                let n = split.iter().filter(|s| s.label == label).count();
                assert_eq!(flag_count(split, "noise", label), n / 2);
            }
        }
    }

    #[test]
    fn same_prevalence_policy_propagates_to_eval() {
        let mut m = manifest(vec![noise(0.65)]);
        m.split_policy = SplitPolicy::SamePrevalenceAllSplits;
        m.n_per_class = SplitCounts {
            train: 100,
            val: 100,
            test: 100,
        };
        let b: SplitBundle<f32> = build_splits(&m).unwrap();
        for split in [&b.val, &b.test] {
            assert_eq!(flag_count(split, "noise", 1), 65);
            assert_eq!(flag_count(split, "noise", 0), 35);
        }
    }

    #[test]
    fn multi_shortcut_each_targets_its_own_class() {
        let square = ShortcutSpec {
            name: "square".into(),
            kind: ShortcutKind::SquareConstant,
            amplitude: 1.0,
            square_side: Some(2),
            position: Some((1, 1)),
            target_class: 0,
            prevalence: 1.0,
        };
        square.validate(16).unwrap();
        let m = manifest(vec![noise(1.0), square]);
        let b: SplitBundle<f32> = build_splits(&m).unwrap();
        assert_eq!(flag_count(&b.student_train, "noise", 1), 400);
        assert_eq!(flag_count(&b.student_train, "noise", 0), 0);
        assert_eq!(flag_count(&b.student_train, "square", 0), 400);
        assert_eq!(flag_count(&b.student_train, "square", 1), 0);
    }

    #[test]
    fn folds_share_the_test_split_exactly() {
        let m = manifest(vec![noise(1.0)]);
        let mut bundles = Vec::new();
        for index in 0..3 {
            let opts = SplitOptions {
                clean_student_train: false,
                fold: Some(FoldSpec { k: 5, index }),
            };
            bundles.push(build_splits_opts::<f32>(&m, opts).unwrap());
        }
        for b in &bundles[1..] {
            assert_eq!(b.test, bundles[0].test);
        }
        // train/val partition differs between folds but stays disjoint
        let val_ids: BTreeSet<_> = bundles[0].val.iter().map(|s| s.id.clone()).collect();
        let val_ids1: BTreeSet<_> = bundles[1].val.iter().map(|s| s.id.clone()).collect();
        assert_ne!(val_ids, val_ids1);
        for b in &bundles {
            let train_ids: BTreeSet<_> = b
                .teacher_train
                .iter()
                .chain(&b.student_train)
                .map(|s| s.id.clone())
                .collect();
            assert!(b.val.iter().all(|s| !train_ids.contains(&s.id)));
        }
    }

    #[test]
    fn clean_student_train_keeps_eval_injection() {
        let m = manifest(vec![noise(1.0)]);
        let opts = SplitOptions {
            clean_student_train: true,
            fold: None,
        };
        let clean: SplitBundle<f32> = build_splits_opts(&m, opts).unwrap();
        let biased: SplitBundle<f32> = build_splits(&m).unwrap();
        assert_eq!(flag_count(&clean.student_train, "noise", 1), 0);
        assert_eq!(clean.test, biased.test);
        assert_eq!(clean.val, biased.val);
    }

    #[test]
    fn deterministic_given_manifest_and_fold() {
        let m = manifest(vec![noise(0.85)]);
        let a: SplitBundle<f32> = build_splits(&m).unwrap();
        let b: SplitBundle<f32> = build_splits(&m).unwrap();
        assert_eq!(a, b);
    }
}

//! Shortcut mask assignment and pixel-level injection.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ImageSample, ShortcutKind, ShortcutSpec};
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Round-half-up count of marked samples for a rate over `n`.
pub fn marked_count(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

/// Which marking rule applies to a split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskRule {
    /// `prevalence` of the target class, `1 - prevalence` of the other
    /// class (the training correlation).
    Correlated,
    /// Exactly half of each class (balanced evaluation splits).
    Balanced,
    /// `rate` of the target class and none of the other class (teacher
    /// contamination).
    TargetOnly { rate: f64 },
}

/// Mark which samples receive the shortcut.
///
/// Counts follow the round-half-up rule exactly; selection within a class
/// is a seeded uniform draw without replacement (target class first).
pub fn assign_shortcut_mask(
    labels: &[u8],
    spec: &ShortcutSpec,
    rule: MaskRule,
    rng_seed: u64,
) -> Result<Vec<bool>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("assign_shortcut_mask labels".into()));
    }
    let target = spec.target_class;
    let target_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == target).collect();
    let other_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != target).collect();

    let (k_target, k_other) = match rule {
        MaskRule::Correlated => (
            marked_count(spec.prevalence, target_idx.len()),
            marked_count(1.0 - spec.prevalence, other_idx.len()),
        ),
        MaskRule::Balanced => (
            marked_count(0.5, target_idx.len()),
            marked_count(0.5, other_idx.len()),
        ),
        MaskRule::TargetOnly { rate } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invalid("rate", format!("{rate} outside [0, 1]")));
            }
            (marked_count(rate, target_idx.len()), 0)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut mask = vec![false; labels.len()];
    for (pool, k) in [(&target_idx, k_target), (&other_idx, k_other)] {
        if k > 0 {
            for pos in rand::seq::index::sample(&mut rng, pool.len(), k) {
                mask[pool[pos]] = true;
            }
        }
    }
    Ok(mask)
}

/// Apply the shortcut's pixel effect to one sample and set its flag.
///
/// A pure function of `(sample, spec, rng_seed)`; if the sample already
/// carries the flag the call is a no-op, so injection is idempotent.
pub fn inject_shortcut<F: Scalar>(
    sample: &ImageSample<F>,
    spec: &ShortcutSpec,
    rng_seed: u64,
) -> Result<ImageSample<F>> {
    let side = sample.side();
    spec.validate(side)?;
    if sample.shortcut_flags.get(&spec.name) == Some(&true) {
        return Ok(sample.clone());
    }

    let mut out = sample.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match spec.kind {
        ShortcutKind::DiffuseNoise => {
            for v in out.pixels.iter_mut() {
                let noise = rng.random_range(0.0..=spec.amplitude);
                *v = (*v + F::f(noise)).min(F::one()).max(F::zero());
            }
        }
        ShortcutKind::SquareConstant | ShortcutKind::SquareRandom => {
            let sq = spec.square_side.expect("validated");
            let (row, col) = if spec.kind == ShortcutKind::SquareConstant {
                spec.position.expect("validated")
            } else {
                (
                    rng.random_range(0..=side - sq),
                    rng.random_range(0..=side - sq),
                )
            };
            let value = F::f(spec.amplitude.clamp(0.0, 1.0));
            for r in row..row + sq {
                for c in col..col + sq {
                    out.pixels[[r, c]] = value;
                }
            }
        }
    }
    out.shortcut_flags.insert(spec.name.clone(), true);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use ndarray::Array2;
    use std::collections::BTreeMap;

    fn noise_spec() -> ShortcutSpec {
        ShortcutSpec {
            name: "noise".into(),
            kind: ShortcutKind::DiffuseNoise,
            amplitude: 0.15,
            square_side: None,
            position: None,
            target_class: 1,
            prevalence: 1.0,
        }
    }

    fn square_spec(kind: ShortcutKind, side: usize, pos: Option<(usize, usize)>) -> ShortcutSpec {
        ShortcutSpec {
            name: "square".into(),
            kind,
            amplitude: 1.0,
            square_side: Some(side),
            position: pos,
            target_class: 1,
            prevalence: 1.0,
        }
    }

    fn zero_sample(side: usize) -> ImageSample<f64> {
        let mut flags = BTreeMap::new();
        flags.insert("noise".to_string(), false);
        flags.insert("square".to_string(), false);
        ImageSample {
            id: "t-0".into(),
            pixels: Array2::zeros((side, side)),
            label: 1,
            shortcut_flags: flags,
            split: Split::Train,
        }
    }

    #[test]
    fn full_prevalence_marks_all_targets() {
        let labels = [vec![1u8; 100], vec![0u8; 100]].concat();
        let mask = assign_shortcut_mask(&labels, &noise_spec(), MaskRule::Correlated, 1).unwrap();
        let target_marked = mask.iter().take(100).filter(|&&m| m).count();
        let other_marked = mask.iter().skip(100).filter(|&&m| m).count();
        assert_eq!(target_marked, 100);
        assert_eq!(other_marked, 0);
    }

    #[test]
    fn per_class_counts_follow_rounding_rule() {
        let labels = [vec![1u8; 100], vec![0u8; 100]].concat();
        let mut spec = noise_spec();
        spec.prevalence = 0.75;
        let mask = assign_shortcut_mask(&labels, &spec, MaskRule::Correlated, 1).unwrap();
        assert_eq!(mask.iter().take(100).filter(|&&m| m).count(), 75);
        assert_eq!(mask.iter().skip(100).filter(|&&m| m).count(), 25);
    }

    #[test]
    fn balanced_rule_marks_half_of_each_class() {
        let labels = [vec![1u8; 50], vec![0u8; 50]].concat();
        let mask = assign_shortcut_mask(&labels, &noise_spec(), MaskRule::Balanced, 1).unwrap();
        assert_eq!(mask.iter().take(50).filter(|&&m| m).count(), 25);
        assert_eq!(mask.iter().skip(50).filter(|&&m| m).count(), 25);
    }

    #[test]
    fn empty_labels_error() {
        assert!(assign_shortcut_mask(&[], &noise_spec(), MaskRule::Balanced, 1).is_err());
    }

    #[test]
    fn target_only_rule_spares_other_class() {
        let labels = [vec![1u8; 100], vec![0u8; 100]].concat();
        let rule = MaskRule::TargetOnly { rate: 0.10 };
        let mask = assign_shortcut_mask(&labels, &noise_spec(), rule, 3).unwrap();
        assert_eq!(mask.iter().take(100).filter(|&&m| m).count(), 10);
        assert_eq!(mask.iter().skip(100).filter(|&&m| m).count(), 0);
    }

    #[test]
    fn noise_bounded_by_amplitude() {
        let s = zero_sample(8);
        let out = inject_shortcut(&s, &noise_spec(), 9).unwrap();
        for &v in out.pixels.iter() {
            assert!((0.0..=0.15).contains(&v), "pixel {v} outside [0, 0.15]");
        }
        assert_eq!(out.shortcut_flags["noise"], true);
        assert_eq!(out.label, s.label);
        assert_eq!(out.shortcut_flags["square"], false);
    }

    #[test]
    fn constant_square_sets_exact_block() {
        let s = zero_sample(8);
        let spec = square_spec(ShortcutKind::SquareConstant, 2, Some((0, 0)));
        let out = inject_shortcut(&s, &spec, 9).unwrap();
        let ones = out.pixels.iter().filter(|&&v| v == 1.0).count();
        let zeros = out.pixels.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(ones, 4);
        assert_eq!(zeros, 60);
    }

    #[test]
    fn random_square_covers_every_valid_position() {
        let s = zero_sample(8);
        let spec = square_spec(ShortcutKind::SquareRandom, 3, None);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..1000u64 {
            let out = inject_shortcut(&s, &spec, seed).unwrap();
            // locate the square: top-left lit pixel
            let mut top_left = None;
            'outer: for r in 0..8 {
                for c in 0..8 {
                    if out.pixels[[r, c] ] == 1.0 {
                        top_left = Some((r, c));
                        break 'outer;
                    }
                }
            }
            let (r, c) = top_left.expect("square present");
            assert!(r <= 5 && c <= 5, "square escapes bounds at ({r},{c})");
            seen.insert((r, c));
        }
        assert_eq!(seen.len(), 36, "should observe all 36 valid placements");
    }

    #[test]
    fn out_of_bounds_squares_error() {
        let s = zero_sample(8);
        let spec = square_spec(ShortcutKind::SquareConstant, 2, Some((7, 7)));
        assert!(inject_shortcut(&s, &spec, 0).is_err());
        let spec = square_spec(ShortcutKind::SquareRandom, 9, None);
        assert!(inject_shortcut(&s, &spec, 0).is_err());
    }

    #[test]
    fn injection_is_idempotent() {
        let s = zero_sample(8);
        let once = inject_shortcut(&s, &noise_spec(), 9).unwrap();
        let twice = inject_shortcut(&once, &noise_spec(), 9).unwrap();
        assert_eq!(once, twice);
    }
}

//! Base dataset generation: the task-relevant class signal.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetManifest, ImageSample, Split};
use crate::num::Scalar;
use crate::seed::rng_for;
use crate::Result;

/// Generate the class-balanced, seeded base dataset for all three splits.
///
/// Each sample's pixel content is a pure function of `(manifest.seed,
/// sample id)`, so regeneration is bit-identical and samples may be
/// rendered in any order. No shortcut features are present; every
/// declared shortcut gets a `false` flag.
pub fn generate_base_dataset<F: Scalar>(manifest: &DatasetManifest) -> Result<Vec<ImageSample<F>>> {
    manifest.validate()?;
    let mut samples = Vec::new();
    let splits = [
        (Split::Train, manifest.n_per_class.train),
        (Split::Val, manifest.n_per_class.val),
        (Split::Test, manifest.n_per_class.test),
    ];
    for (split, n) in splits {
        for label in [0u8, 1u8] {
            for i in 0..n {
                let id = format!("{split}-c{label}-{i:05}");
                samples.push(render_sample(manifest, &id, label, split));
            }
        }
    }
    Ok(samples)
}

fn render_sample<F: Scalar>(
    manifest: &DatasetManifest,
    id: &str,
    label: u8,
    split: Split,
) -> ImageSample<F> {
    let side = manifest.image_side;
    let sig = &manifest.class_signal;
    let mut rng = rng_for(manifest.seed, &["sample", id]);

    let mut pixels = Array2::<f64>::zeros((side, side));

    // background: oriented intensity ramp plus per-pixel clutter
    let ramp_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let ramp_mag: f64 = rng.random_range(0.0..0.08);
    let (dy, dx) = (ramp_angle.sin(), ramp_angle.cos());
    for r in 0..side {
        for c in 0..side {
            let u = (r as f64 / side as f64 - 0.5) * dy + (c as f64 / side as f64 - 0.5) * dx;
            let noise = rng.random_range(-sig.background_noise..=sig.background_noise);
            pixels[[r, c]] = sig.background_level + ramp_mag * u + noise;
        }
    }

    // elliptical blob: random geometry, class-dependent contrast and texture
    let cy: f64 = rng.random_range(0.30..0.70) * side as f64;
    let cx: f64 = rng.random_range(0.30..0.70) * side as f64;
    let a: f64 = rng.random_range(sig.radius_min_frac..sig.radius_max_frac) * side as f64;
    let b: f64 = rng.random_range(sig.radius_min_frac..sig.radius_max_frac) * side as f64;
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin_t, cos_t) = theta.sin_cos();

    // one latent severity drives both cues; the class ranges overlap
    let u: f64 = rng.random_range(0.0..1.0);
    let severity = if label == 1 {
        sig.severity_min_class1 + u * (1.0 - sig.severity_min_class1)
    } else {
        u * sig.severity_max_class0
    };
    let contrast = sig.blob_contrast + sig.contrast_gap * severity;
    let tex_sigma = sig.texture_sigma + sig.texture_gap * severity;
    let speckle = Normal::new(0.0, tex_sigma.max(1e-9)).expect("sigma > 0");

    for r in 0..side {
        for c in 0..side {
            let y = r as f64 - cy;
            let x = c as f64 - cx;
            let u = (x * cos_t + y * sin_t) / a;
            let v = (-x * sin_t + y * cos_t) / b;
            let d = (u * u + v * v).sqrt();
            if d < 1.0 {
                // soft edge over the outer 25% of the radius
                let edge = ((1.0 - d) / 0.25).min(1.0);
                pixels[[r, c]] += contrast * edge + speckle.sample(&mut rng) * edge;
            } else {
                // keep the RNG stream aligned across geometries
                let _ = speckle.sample(&mut rng);
            }
        }
    }

    let pixels = pixels.mapv(|v| F::f(v.clamp(0.0, 1.0)));
    let shortcut_flags: BTreeMap<String, bool> = manifest
        .shortcuts
        .iter()
        .map(|s| (s.name.clone(), false))
        .collect();

    ImageSample {
        id: id.to_string(),
        pixels,
        label,
        shortcut_flags,
        split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SplitCounts, SplitPolicy};

    fn manifest(seed: u64) -> DatasetManifest {
        DatasetManifest {
            seed,
            image_side: 16,
            n_per_class: SplitCounts {
                train: 100,
                val: 0,
                test: 0,
            },
            class_signal: ClassSignal::default(),
            shortcuts: vec![],
            split_policy: SplitPolicy::CorrelatedTrainBalancedEval,
            teacher_subset_fraction: 0.2,
            teacher_contamination: 0.0,
        }
    }

    #[test]
    fn class_balanced_by_construction() {
        let samples: Vec<ImageSample<f32>> = generate_base_dataset(&manifest(7)).unwrap();
        assert_eq!(samples.len(), 200);
        let pos = samples.iter().filter(|s| s.label == 1).count();
        assert_eq!(pos, 100);
    }

    #[test]
    fn identical_seed_is_bit_identical() {
        let a: Vec<ImageSample<f32>> = generate_base_dataset(&manifest(7)).unwrap();
        let b: Vec<ImageSample<f32>> = generate_base_dataset(&manifest(7)).unwrap();
        assert_eq!(a, b);
        let c: Vec<ImageSample<f32>> = generate_base_dataset(&manifest(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pixels_stay_in_unit_interval() {
        let samples: Vec<ImageSample<f64>> = generate_base_dataset(&manifest(3)).unwrap();
        for s in samples {
            for &v in s.pixels.iter() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn small_image_side_rejected() {
        let mut m = manifest(1);
        m.image_side = 8;
        let err = generate_base_dataset::<f32>(&m).unwrap_err();
        assert!(err.to_string().contains("image_side"));
    }
}

//! Augmentation baselines: rotation/flip, MixUp, CutOut, CutMix.

use ndarray::{Array1, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::num::Scalar;

/// Baseline augmentation method.
///
/// Documented defaults: `aug` rotates uniformly in [-15 deg, +15 deg] and
/// flips horizontally with probability 0.5; `mixup` and `cutmix` draw
/// their coefficient from Beta(1, 1); `cutout` zeroes a square patch of
/// half the image side, placed fully inside bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugMethod {
    None,
    Aug,
    Mixup,
    Cutout,
    Cutmix,
}

/// Apply the method to a batch. Labels are soft (mix methods return
/// convex label combinations). Pairwise methods on a batch of one fall
/// back to identity with a warning.
pub fn baseline_augment<F: Scalar>(
    images: &Array4<F>,
    labels: &Array1<F>,
    method: AugMethod,
    rng: &mut ChaCha8Rng,
) -> Result<(Array4<F>, Array1<F>)> {
    let n = images.dim().0;
    match method {
        AugMethod::None => Ok((images.clone(), labels.clone())),
        AugMethod::Aug => {
            let mut out = images.clone();
            for i in 0..n {
                let angle = rng.random_range(-15.0f64..=15.0);
                let flip = rng.random_range(0.0f64..1.0) < 0.5;
                let img = images.index_axis(ndarray::Axis(0), i);
                let rotated = rotate_bilinear(&img.index_axis(ndarray::Axis(0), 0).to_owned(), angle);
                let mut view = out.index_axis_mut(ndarray::Axis(0), i);
                let mut chan = view.index_axis_mut(ndarray::Axis(0), 0);
                let (h, w) = (rotated.nrows(), rotated.ncols());
                for r in 0..h {
                    for c in 0..w {
                        let cc = if flip { w - 1 - c } else { c };
                        chan[[r, c]] = rotated[[r, cc]];
                    }
                }
            }
            Ok((out, labels.clone()))
        }
        AugMethod::Mixup => {
            if n < 2 {
                log::warn!("mixup on a batch of {n}; falling back to identity");
                return Ok((images.clone(), labels.clone()));
            }
            let lambda = beta11(rng);
            let perm = permutation(n, rng);
            let lam = F::f(lambda);
            let mut out = images.clone();
            let mut y = labels.clone();
            for i in 0..n {
                let partner = images.index_axis(ndarray::Axis(0), perm[i]).to_owned();
                let mut view = out.index_axis_mut(ndarray::Axis(0), i);
                view.zip_mut_with(&partner, |a, &b| *a = lam * *a + (F::one() - lam) * b);
                y[i] = lam * labels[i] + (F::one() - lam) * labels[perm[i]];
            }
            Ok((out, y))
        }
        AugMethod::Cutout => {
            let side = images.dim().2;
            let patch = (side / 2).max(1);
            let mut out = images.clone();
            for i in 0..n {
                let r0 = rng.random_range(0..=side - patch);
                let c0 = rng.random_range(0..=side - patch);
                let mut view = out.index_axis_mut(ndarray::Axis(0), i);
                for r in r0..r0 + patch {
                    for c in c0..c0 + patch {
                        view[[0, r, c]] = F::zero();
                    }
                }
            }
            Ok((out, labels.clone()))
        }
        AugMethod::Cutmix => {
            if n < 2 {
                log::warn!("cutmix on a batch of {n}; falling back to identity");
                return Ok((images.clone(), labels.clone()));
            }
            let side = images.dim().2;
            let lambda = beta11(rng);
            // patch area matches 1 - lambda; side from its square root
            let patch = ((side as f64) * (1.0 - lambda).sqrt()).round() as usize;
            let patch = patch.min(side);
            let perm = permutation(n, rng);
            let mut out = images.clone();
            let mut y = labels.clone();
            if patch == 0 {
                return Ok((out, y));
            }
            for i in 0..n {
                let r0 = rng.random_range(0..=side - patch);
                let c0 = rng.random_range(0..=side - patch);
                let partner = images.index_axis(ndarray::Axis(0), perm[i]).to_owned();
                let mut view = out.index_axis_mut(ndarray::Axis(0), i);
                for r in r0..r0 + patch {
                    for c in c0..c0 + patch {
                        view[[0, r, c]] = partner[[0, r, c]];
                    }
                }
                let area_frac = (patch * patch) as f64 / (side * side) as f64;
                let w_self = F::f(1.0 - area_frac);
                y[i] = w_self * labels[i] + (F::one() - w_self) * labels[perm[i]];
            }
            Ok((out, y))
        }
    }
}

fn beta11(rng: &mut ChaCha8Rng) -> f64 {
    let beta = Beta::new(1.0, 1.0).expect("valid beta");
    beta.sample(rng)
}

fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Bilinear rotation about the image center; out-of-range samples are
/// filled with zero.
fn rotate_bilinear<F: Scalar>(img: &ndarray::Array2<F>, degrees: f64) -> ndarray::Array2<F> {
    let (h, w) = img.dim();
    let theta = degrees.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = ndarray::Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            // inverse mapping
            let y = r as f64 - cy;
            let x = c as f64 - cx;
            let sy = y * cos_t - x * sin_t + cy;
            let sx = y * sin_t + x * cos_t + cx;
            let (r0, c0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - r0, sx - c0);
            let mut acc = 0.0f64;
            for (dr, dc, wgt) in [
                (0.0, 0.0, (1.0 - fy) * (1.0 - fx)),
                (0.0, 1.0, (1.0 - fy) * fx),
                (1.0, 0.0, fy * (1.0 - fx)),
                (1.0, 1.0, fy * fx),
            ] {
                let rr = r0 + dr;
                let cc = c0 + dc;
                if rr >= 0.0 && rr < h as f64 && cc >= 0.0 && cc < w as f64 {
                    acc += wgt * img[[rr as usize, cc as usize]].as_f64();
                }
            }
            out[[r, c]] = F::f(acc);
        }
    }
    out
}

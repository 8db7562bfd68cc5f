//! Max pooling and global average pooling.

use ndarray::{Array2, Array4};

use crate::num::Scalar;

pub struct MaxPoolCache {
    /// flat (h*w) argmax per (n, c, oh, ow)
    argmax: Vec<usize>,
    input_dim: (usize, usize, usize, usize),
}

/// Square max pooling with kernel == stride == `k`; trailing rows/columns
/// that do not fill a window are dropped.
pub fn maxpool_forward<F: Scalar>(x: &Array4<F>, k: usize) -> (Array4<F>, MaxPoolCache) {
    let (n, c, h, w) = x.dim();
    let (h_out, w_out) = (h / k, w / k);
    let mut y = Array4::zeros((n, c, h_out, w_out));
    let mut argmax = vec![0usize; n * c * h_out * w_out];
    let mut slot = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut best = x[[ni, ci, oh * k, ow * k]];
                    let mut best_at = (oh * k) * w + ow * k;
                    for kr in 0..k {
                        for kc in 0..k {
                            let (r, cc) = (oh * k + kr, ow * k + kc);
                            let v = x[[ni, ci, r, cc]];
                            if v > best {
                                best = v;
                                best_at = r * w + cc;
                            }
                        }
                    }
                    y[[ni, ci, oh, ow]] = best;
                    argmax[slot] = best_at;
                    slot += 1;
                }
            }
        }
    }
    (
        y,
        MaxPoolCache {
            argmax,
            input_dim: (n, c, h, w),
        },
    )
}

pub fn maxpool_backward<F: Scalar>(dy: &Array4<F>, cache: &MaxPoolCache, _k: usize) -> Array4<F> {
    let (n, c, h, w) = cache.input_dim;
    let (_, _, h_out, w_out) = dy.dim();
    let mut dx = Array4::zeros((n, c, h, w));
    let mut slot = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let at = cache.argmax[slot];
                    dx[[ni, ci, at / w, at % w]] += dy[[ni, ci, oh, ow]];
                    slot += 1;
                }
            }
        }
    }
    dx
}

/// Global average pooling: (n, c, h, w) -> (n, c).
pub fn gap_forward<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let scale = F::one() / F::f((h * w) as f64);
    let mut y = Array2::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = F::zero();
            for hi in 0..h {
                for wi in 0..w {
                    acc += x[[ni, ci, hi, wi]];
                }
            }
            y[[ni, ci]] = acc * scale;
        }
    }
    y
}

/// Spread a pooled gradient uniformly back over the spatial grid.
pub fn gap_backward<F: Scalar>(dy: &Array2<F>, h: usize, w: usize) -> Array4<F> {
    let (n, c) = dy.dim();
    let scale = F::one() / F::f((h * w) as f64);
    let mut dx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let g = dy[[ni, ci]] * scale;
            for hi in 0..h {
                for wi in 0..w {
                    dx[[ni, ci, hi, wi]] = g;
                }
            }
        }
    }
    dx
}

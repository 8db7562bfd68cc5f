//! Batch normalization over (N, H, W) per channel.

use ndarray::{Array1, Array4, ArrayD, IxDyn};

use super::{Mode, Param};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct NormCache<F> {
    /// centered input (x - mean)
    centered: Array4<F>,
    /// 1 / sqrt(var + eps) per channel
    inv_std: Array1<F>,
    /// whether the forward ran in train mode (backward requires it)
    trained: bool,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Array4<F>, mode: Mode) -> (Array4<F>, NormCache<F>) {
        let (n, c, h, w) = x.dim();
        debug_assert_eq!(c, self.channels());
        let m = F::f((n * h * w) as f64);
        let eps = F::f(self.eps);

        let mut mean = Array1::<F>::zeros(c);
        let mut var = Array1::<F>::zeros(c);
        match mode {
            Mode::Train => {
                for ci in 0..c {
                    let mut acc = F::zero();
                    for ni in 0..n {
                        for hi in 0..h {
                            for wi in 0..w {
                                acc += x[[ni, ci, hi, wi]];
                            }
                        }
                    }
                    mean[ci] = acc / m;
                    let mut vacc = F::zero();
                    for ni in 0..n {
                        for hi in 0..h {
                            for wi in 0..w {
                                let d = x[[ni, ci, hi, wi]] - mean[ci];
                                vacc += d * d;
                            }
                        }
                    }
                    var[ci] = vacc / m;
                }
                let mom = F::f(self.momentum);
                for ci in 0..c {
                    self.running_mean[ci] =
                        (F::one() - mom) * self.running_mean[ci] + mom * mean[ci];
                    self.running_var[ci] = (F::one() - mom) * self.running_var[ci] + mom * var[ci];
                }
            }
            Mode::Eval => {
                mean.assign(&self.running_mean);
                var.assign(&self.running_var);
            }
        }

        let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
        let mut centered = x.clone();
        let mut y = Array4::zeros((n, c, h, w));
        let gamma = gamma_of(self);
        let beta = beta_of(self);
        for ci in 0..c {
            let mu = mean[ci];
            let is = inv_std[ci];
            let g = gamma[ci];
            let b = beta[ci];
            for ni in 0..n {
                for hi in 0..h {
                    for wi in 0..w {
                        let cen = x[[ni, ci, hi, wi]] - mu;
                        centered[[ni, ci, hi, wi]] = cen;
                        y[[ni, ci, hi, wi]] = g * cen * is + b;
                    }
                }
            }
        }
        (
            y,
            NormCache {
                centered,
                inv_std,
                trained: mode == Mode::Train,
            },
        )
    }

    /// Inference-mode forward using the running statistics; no mutation,
    /// no cache.
    pub fn eval_forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let eps = F::f(self.eps);
        let gamma = gamma_of(self);
        let beta = beta_of(self);
        let mut y = Array4::zeros((n, c, h, w));
        for ci in 0..c {
            let mu = self.running_mean[ci];
            let is = F::one() / (self.running_var[ci] + eps).sqrt();
            let g = gamma[ci];
            let b = beta[ci];
            for ni in 0..n {
                for hi in 0..h {
                    for wi in 0..w {
                        y[[ni, ci, hi, wi]] = g * (x[[ni, ci, hi, wi]] - mu) * is + b;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &NormCache<F>, dy: &Array4<F>) -> Array4<F> {
        assert!(cache.trained, "backward requires a train-mode forward");
        let (n, c, h, w) = dy.dim();
        let m = F::f((n * h * w) as f64);
        let gamma = gamma_of(self);

        let mut dx = Array4::zeros((n, c, h, w));
        for ci in 0..c {
            let is = cache.inv_std[ci];
            let g = gamma[ci];
            // reductions over the channel slice
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for ni in 0..n {
                for hi in 0..h {
                    for wi in 0..w {
                        let d = dy[[ni, ci, hi, wi]];
                        sum_dy += d;
                        sum_dy_xhat += d * cache.centered[[ni, ci, hi, wi]] * is;
                    }
                }
            }
            self.beta.grad[ci] += sum_dy;
            self.gamma.grad[ci] += sum_dy_xhat;

            for ni in 0..n {
                for hi in 0..h {
                    for wi in 0..w {
                        let xhat = cache.centered[[ni, ci, hi, wi]] * is;
                        let d = dy[[ni, ci, hi, wi]];
                        dx[[ni, ci, hi, wi]] =
                            g * is * (d - sum_dy / m - xhat * sum_dy_xhat / m);
                    }
                }
            }
        }
        dx
    }
}

fn gamma_of<F: Scalar>(bn: &BatchNorm2d<F>) -> Array1<F> {
    bn.gamma
        .value
        .view()
        .into_dimensionality::<ndarray::Ix1>()
        .unwrap()
        .to_owned()
}

fn beta_of<F: Scalar>(bn: &BatchNorm2d<F>) -> Array1<F> {
    bn.beta
        .value
        .view()
        .into_dimensionality::<ndarray::Ix1>()
        .unwrap()
        .to_owned()
}

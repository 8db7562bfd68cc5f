//! 2D convolution via im2col and matrix multiplication.

use ndarray::{Array2, Array4, ArrayD, Ix1};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Param;
use crate::num::Scalar;

/// Square-kernel convolution with symmetric zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    /// (out_channels, in_channels, k, k)
    pub weight: Param<F>,
    /// (out_channels)
    pub bias: Param<F>,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvCache<F> {
    /// im2col matrix, (n * h_out * w_out, c_in * k * k)
    cols: Array2<F>,
    input_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<F: Scalar> Conv2d<F> {
    /// He-normal initialization, deterministic for a given RNG state.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0, std).expect("std > 0");
        let weight = ArrayD::from_shape_fn(
            ndarray::IxDyn(&[out_channels, in_channels, kernel, kernel]),
            |_| F::f(normal.sample(rng)),
        );
        let bias = ArrayD::zeros(ndarray::IxDyn(&[out_channels]));
        Conv2d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array4<F>) -> (Array4<F>, ConvCache<F>) {
        let (n, c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_channels());
        let k = self.kernel();
        let (h_out, w_out) = self.out_size(h, w);
        let cols = im2col(x, k, self.stride, self.padding, h_out, w_out);

        let c_out = self.out_channels();
        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((c_out, c * k * k))
            .expect("contiguous weight");
        // (rows, ckk) x (ckk, c_out)
        let y_rows = cols.dot(&w_mat.t());

        let bias = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = Array4::zeros((n, c_out, h_out, w_out));
        for ni in 0..n {
            for oc in 0..c_out {
                let b = bias[oc];
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let row = (ni * h_out + oh) * w_out + ow;
                        y[[ni, oc, oh, ow]] = y_rows[[row, oc]] + b;
                    }
                }
            }
        }
        (
            y,
            ConvCache {
                cols,
                input_dim: (n, c, h, w),
                out_hw: (h_out, w_out),
            },
        )
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache<F>, dy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = cache.input_dim;
        let (h_out, w_out) = cache.out_hw;
        let k = self.kernel();
        let c_out = self.out_channels();

        // (rows, c_out) view of dy
        let mut dy_rows = Array2::zeros((n * h_out * w_out, c_out));
        for ni in 0..n {
            for oc in 0..c_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let row = (ni * h_out + oh) * w_out + ow;
                        dy_rows[[row, oc]] = dy[[ni, oc, oh, ow]];
                    }
                }
            }
        }

        // dW = dy_rows^T . cols
        let dw = dy_rows.t().dot(&cache.cols);
        {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((c_out, c * k * k))
                .expect("contiguous grad");
            wgrad += &dw;
        }
        // db = column sums of dy_rows
        {
            let mut bgrad = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<Ix1>()
                .unwrap();
            for oc in 0..c_out {
                bgrad[oc] += dy_rows.column(oc).sum();
            }
        }

        // dx = col2im(dy_rows . w_mat)
        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((c_out, c * k * k))
            .expect("contiguous weight");
        let dcols = dy_rows.dot(&w_mat);
        col2im(
            &dcols,
            (n, c, h, w),
            k,
            self.stride,
            self.padding,
            h_out,
            w_out,
        )
    }
}

fn im2col<F: Scalar>(
    x: &Array4<F>,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::zeros((n * h_out * w_out, c * k * k));
    for ni in 0..n {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let row = (ni * h_out + oh) * w_out + ow;
                let base_r = (oh * stride) as isize - padding as isize;
                let base_c = (ow * stride) as isize - padding as isize;
                let mut col = 0usize;
                for ci in 0..c {
                    for kr in 0..k {
                        let r = base_r + kr as isize;
                        for kc in 0..k {
                            let cc = base_c + kc as isize;
                            if r >= 0 && (r as usize) < h && cc >= 0 && (cc as usize) < w {
                                cols[[row, col]] = x[[ni, ci, r as usize, cc as usize]];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    dcols: &Array2<F>,
    input_dim: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) -> Array4<F> {
    let (n, c, h, w) = input_dim;
    let mut dx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let row = (ni * h_out + oh) * w_out + ow;
                let base_r = (oh * stride) as isize - padding as isize;
                let base_c = (ow * stride) as isize - padding as isize;
                let mut col = 0usize;
                for ci in 0..c {
                    for kr in 0..k {
                        let r = base_r + kr as isize;
                        for kc in 0..k {
                            let cc = base_c + kc as isize;
                            if r >= 0 && (r as usize) < h && cc >= 0 && (cc as usize) < w {
                                dx[[ni, ci, r as usize, cc as usize]] += dcols[[row, col]];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    dx
}

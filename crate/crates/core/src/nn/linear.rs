//! Fully connected layer.

use ndarray::{Array2, ArrayD, Ix1, Ix2, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Param;
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// (out_features, in_features)
    pub weight: Param<F>,
    /// (out_features)
    pub bias: Param<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / in_features as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std > 0");
        let weight = ArrayD::from_shape_fn(IxDyn(&[out_features, in_features]), |_| {
            F::f(normal.sample(rng))
        });
        Linear {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_features]))),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// y = x . W^T + b, x: (n, in)
    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        for mut row in y.rows_mut() {
            row += &b;
        }
        y
    }

    /// Accumulates parameter gradients and returns dx.
    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        {
            let dw = dy.t().dot(x);
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .unwrap();
            wgrad += &dw;
        }
        {
            let mut bgrad = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<Ix1>()
                .unwrap();
            for col in 0..dy.ncols() {
                bgrad[col] += dy.column(col).sum();
            }
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        dy.dot(&w)
    }
}

//! Adaptive-moment optimizer with decoupled weight decay.

use ndarray::ArrayD;

use super::Param;
use crate::num::Scalar;

/// AdamW: the weight-decay term is applied directly to the parameters,
/// outside the adaptive update.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over `params`; the slice must present the same
    /// parameters in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param<F>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed size");
        self.step += 1;
        let b1 = F::f(self.beta1);
        let b2 = F::f(self.beta2);
        let lr = F::f(self.learning_rate);
        let wd = F::f(self.weight_decay);
        let eps = F::f(self.eps);
        let bc1 = F::f(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = F::f(1.0 - self.beta2.powi(self.step as i32));

        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|val, &g, m, v| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *val = *val - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * *val;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn descends_a_quadratic() {
        // minimize (x - 3)^2 with gradient 2(x - 3)
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 0.0f64));
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..500 {
            p.zero_grad();
            let x = p.value[[0]];
            p.grad[[0]] = 2.0 * (x - 3.0);
            opt.step(&mut [&mut p]);
        }
        assert!((p.value[[0]] - 3.0).abs() < 1e-3, "got {}", p.value[[0]]);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 1.0f64));
        let mut opt = AdamW::new(0.01, 0.5);
        p.zero_grad();
        opt.step(&mut [&mut p]);
        // zero gradient: only the decay term acts
        assert!((p.value[[0]] - (1.0 - 0.01 * 0.5)).abs() < 1e-12);
    }
}

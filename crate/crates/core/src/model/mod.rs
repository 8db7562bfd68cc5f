//! Tapped classifiers: a feature encoder exposing an ordered sequence of
//! intermediate tap points, a final classification head, and linear
//! classification probes attached at the taps.

mod archs;
mod checkpoint;
mod confidence;
mod probe;
mod profile;

pub use archs::{arch_registry, build_model};
pub use checkpoint::{load_checkpoint, save_checkpoint, state_digest};
pub use confidence::{confidence, confidence_mean};
pub use probe::{finetune_probes, fit_probe, init_probes, probe_forward, Probe, ProbeOutputs};
pub use profile::{layer_profile, write_profile_csv};

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::nn::{
    backward_blocks, collect_params, eval_blocks, forward_blocks, gap_backward, gap_forward,
    Block, BlockCache, Linear, Mode, Param, TapGrads,
};
use crate::num::Scalar;

/// One intermediate tap point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSpec {
    /// Depth rank, contiguous from 0.
    pub index: usize,
    pub name: String,
    pub feature_channels: usize,
}

/// A classifier exposing intermediate tap points.
#[derive(Debug, Clone)]
pub struct TappedModel<F> {
    pub arch_name: String,
    pub image_side: usize,
    pub init_seed: u64,
    pub encoder: Vec<Block<F>>,
    /// Final classification layer over the globally pooled features.
    pub head: Linear<F>,
    pub taps: Vec<TapSpec>,
}

/// Training-mode forward results, with the caches needed for backward.
pub struct TrainPass<F> {
    /// Feature map at every tap, in depth order.
    pub taps: Vec<Array4<F>>,
    /// Globally pooled final features, (n, c).
    pub pooled: Array2<F>,
    /// Final head logits, (n,).
    pub logits: Array1<F>,
    feat_hw: (usize, usize),
    caches: Vec<BlockCache<F>>,
}

/// Inference-mode forward results: pooled tap features and head logits.
pub struct EvalPass<F> {
    /// Globally pooled features at every tap, (n, c_i).
    pub tap_pooled: Vec<Array2<F>>,
    pub pooled: Array2<F>,
    pub logits: Array1<F>,
}

impl<F: Scalar> TappedModel<F> {
    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    /// Forward in training mode: batch statistics, caches retained.
    pub fn forward_train(&mut self, x: &Array4<F>) -> TrainPass<F> {
        let pass = forward_blocks(&mut self.encoder, x.clone(), Mode::Train);
        debug_assert_eq!(pass.taps.len(), self.taps.len());
        let (_, _, h, w) = pass.output.dim();
        let pooled = gap_forward(&pass.output);
        let logits = self.head.forward(&pooled).column(0).to_owned();
        TrainPass {
            taps: pass.taps,
            pooled,
            logits,
            feat_hw: (h, w),
            caches: pass.caches,
        }
    }

    /// Forward in inference mode; shareable across threads (`&self`).
    pub fn forward_eval(&self, x: &Array4<F>) -> EvalPass<F> {
        let (taps, output) = eval_blocks(&self.encoder, x.clone());
        debug_assert_eq!(taps.len(), self.taps.len());
        let pooled = gap_forward(&output);
        let logits = self.head.forward(&pooled).column(0).to_owned();
        EvalPass {
            tap_pooled: taps.iter().map(gap_forward).collect(),
            pooled,
            logits,
        }
    }

    /// Backward from the head logits plus optional per-tap gradients
    /// (gradients w.r.t. the *pooled* tap features, as produced by the
    /// probes). Accumulates parameter gradients.
    pub fn backward(
        &mut self,
        pass: &TrainPass<F>,
        dlogits: &Array1<F>,
        tap_pooled_grads: Vec<Option<Array2<F>>>,
    ) {
        assert_eq!(tap_pooled_grads.len(), self.taps.len());
        let n = dlogits.len();
        let dlogits2 = dlogits.clone().into_shape_with_order((n, 1)).expect("shape");
        let dpooled = self.head.backward(&pass.pooled, &dlogits2);
        let dfeat = gap_backward(&dpooled, pass.feat_hw.0, pass.feat_hw.1);

        let expanded: Vec<Option<Array4<F>>> = tap_pooled_grads
            .into_iter()
            .zip(&pass.taps)
            .map(|(g, tap)| {
                g.map(|g2| {
                    let (_, _, h, w) = tap.dim();
                    gap_backward(&g2, h, w)
                })
            })
            .collect();
        let mut tap_grads = TapGrads::new(expanded);
        backward_blocks(&mut self.encoder, &pass.caches, dfeat, &mut tap_grads);
    }

    /// Every trainable encoder+head parameter, in stable traversal order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = Vec::new();
        collect_params(&mut self.encoder, &mut out);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Encoder+head state (parameters and running statistics) as named
    /// f64 vectors, in stable order.
    pub fn state(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        crate::nn::collect_state(&self.encoder, "enc", &mut out);
        out.push((
            "head.weight".into(),
            self.head.weight.value.iter().map(|v| v.as_f64()).collect(),
        ));
        out.push((
            "head.bias".into(),
            self.head.bias.value.iter().map(|v| v.as_f64()).collect(),
        ));
        out
    }

    /// Restore state captured by [`TappedModel::state`].
    pub fn load_state(&mut self, state: Vec<(String, Vec<f64>)>) -> crate::Result<()> {
        let mut iter = state.into_iter();
        crate::nn::load_state(&mut self.encoder, &mut iter)?;
        let mut rest: Vec<(String, Vec<f64>)> = iter.collect();
        if rest.len() != 2 {
            return Err(crate::Error::invalid(
                "checkpoint",
                format!("expected 2 head entries, found {}", rest.len()),
            ));
        }
        let (_, bias) = rest.pop().expect("head bias");
        let (_, weight) = rest.pop().expect("head weight");
        if weight.len() != self.head.weight.value.len() || bias.len() != self.head.bias.value.len()
        {
            return Err(crate::Error::invalid("checkpoint", "head size mismatch"));
        }
        for (t, v) in self.head.weight.value.iter_mut().zip(weight) {
            *t = F::f(v);
        }
        for (t, v) in self.head.bias.value.iter_mut().zip(bias) {
            *t = F::f(v);
        }
        Ok(())
    }
}

//! Linear classification probes: average pooling plus a single fully
//! connected layer, fine-tuned with the backbone frozen.

use ndarray::{Array1, Array2, Array4};

use super::TappedModel;
use crate::error::{Error, Result};
use crate::num::{sigmoid, Scalar};

/// A probe at one tap: pooled features -> single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe<F> {
    pub tap_index: usize,
    /// (feature_channels)
    pub weight: Array1<F>,
    pub bias: F,
}

impl<F: Scalar> Probe<F> {
    /// Zero-initialized probe: outputs the maximum-uncertainty
    /// distribution (0.5, 0.5) until fine-tuned.
    pub fn zeros(tap_index: usize, channels: usize) -> Self {
        Probe {
            tap_index,
            weight: Array1::zeros(channels),
            bias: F::zero(),
        }
    }

    pub fn logits(&self, pooled: &Array2<F>) -> Result<Array1<F>> {
        if pooled.ncols() != self.weight.len() {
            return Err(Error::shape(
                format!("probe at tap {}", self.tap_index),
                format!("{} features vs {} weights", pooled.ncols(), self.weight.len()),
            ));
        }
        Ok(pooled.dot(&self.weight) + self.bias)
    }

    /// Sigmoid scores in [0, 1].
    pub fn scores(&self, pooled: &Array2<F>) -> Result<Array1<F>> {
        Ok(self.logits(pooled)?.mapv(sigmoid))
    }

    /// 2-class distribution rows `(1 - f, f)` from the sigmoid score.
    pub fn dist(&self, pooled: &Array2<F>) -> Result<Array2<F>> {
        let f = self.scores(pooled)?;
        let mut out = Array2::zeros((f.len(), 2));
        for (i, &fi) in f.iter().enumerate() {
            out[[i, 0]] = F::one() - fi;
            out[[i, 1]] = fi;
        }
        Ok(out)
    }
}

/// One zero-initialized probe per tap.
pub fn init_probes<F: Scalar>(model: &TappedModel<F>) -> Vec<Probe<F>> {
    model
        .taps
        .iter()
        .map(|t| Probe::zeros(t.index, t.feature_channels))
        .collect()
}

/// Per-tap class distributions plus the final head outputs for a batch.
pub struct ProbeOutputs<F> {
    /// (batch, 2) distribution per tap.
    pub tap_dists: Vec<Array2<F>>,
    /// Final head logits, (batch,).
    pub final_logits: Array1<F>,
    /// Final head distribution rows `(1 - sigmoid, sigmoid)`.
    pub final_dist: Array2<F>,
}

/// Evaluate every probe and the final head on a batch (inference mode).
pub fn probe_forward<F: Scalar>(
    model: &TappedModel<F>,
    probes: &[Probe<F>],
    batch: &Array4<F>,
) -> Result<ProbeOutputs<F>> {
    if probes.len() != model.n_taps() {
        return Err(Error::shape(
            "probe_forward",
            format!("{} probes vs {} taps", probes.len(), model.n_taps()),
        ));
    }
    let pass = model.forward_eval(batch);
    let mut tap_dists = Vec::with_capacity(probes.len());
    for (probe, pooled) in probes.iter().zip(&pass.tap_pooled) {
        tap_dists.push(probe.dist(pooled)?);
    }
    let final_dist = logit_dist(&pass.logits);
    Ok(ProbeOutputs {
        tap_dists,
        final_logits: pass.logits,
        final_dist,
    })
}

/// `(1 - sigmoid(z), sigmoid(z))` rows for a logit vector.
pub fn logit_dist<F: Scalar>(logits: &Array1<F>) -> Array2<F> {
    let mut out = Array2::zeros((logits.len(), 2));
    for (i, &z) in logits.iter().enumerate() {
        let f = sigmoid(z);
        out[[i, 0]] = F::one() - f;
        out[[i, 1]] = f;
    }
    out
}

/// Fit one probe on fixed pooled features with full-batch gradient
/// descent on the binary cross-entropy (the problem is convex; the
/// encoder is frozen so the features never move).
pub fn fit_probe<F: Scalar>(
    probe: &mut Probe<F>,
    features: &Array2<F>,
    labels: &[u8],
    lr: f64,
    epochs: usize,
) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("fit_probe features".into()));
    }
    if features.nrows() != labels.len() {
        return Err(Error::shape(
            "fit_probe",
            format!("{} rows vs {} labels", features.nrows(), labels.len()),
        ));
    }
    let n = F::f(features.nrows() as f64);
    let lr = F::f(lr);
    for _ in 0..epochs {
        let z = probe.logits(features)?;
        // d BCE / d z = sigmoid(z) - y, averaged over the batch
        let residual: Array1<F> = z
            .iter()
            .zip(labels)
            .map(|(&zi, &y)| (sigmoid(zi) - F::f(y as f64)) / n)
            .collect();
        let dw = features.t().dot(&residual);
        let db: F = residual.iter().copied().sum();
        probe.weight = &probe.weight - &(dw * lr);
        probe.bias = probe.bias - lr * db;
    }
    Ok(())
}

/// Fine-tune every probe on the given samples with the encoder and head
/// frozen. Pooled tap features are computed once per dataset (inference
/// mode) and each probe descends on them; encoder, head, and
/// normalization statistics are untouched.
pub fn finetune_probes<F: Scalar>(
    model: &TappedModel<F>,
    probes: &mut [Probe<F>],
    images: &Array4<F>,
    labels: &[u8],
    probe_lr: f64,
    epochs: usize,
) -> Result<()> {
    if images.dim().0 == 0 {
        return Err(Error::EmptyInput("finetune_probes data".into()));
    }
    if probes.len() != model.n_taps() {
        return Err(Error::shape(
            "finetune_probes",
            format!("{} probes vs {} taps", probes.len(), model.n_taps()),
        ));
    }
    // batch the feature extraction to bound memory
    let n = images.dim().0;
    let chunk = 64usize;
    let mut pooled_per_tap: Vec<Array2<F>> = model
        .taps
        .iter()
        .map(|t| Array2::zeros((n, t.feature_channels)))
        .collect();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let pass = model.forward_eval(&batch);
        for (dst, src) in pooled_per_tap.iter_mut().zip(&pass.tap_pooled) {
            dst.slice_mut(ndarray::s![start..end, ..]).assign(src);
        }
        start = end;
    }
    for (probe, feats) in probes.iter_mut().zip(&pooled_per_tap) {
        fit_probe(probe, feats, labels, probe_lr, epochs)?;
    }
    Ok(())
}

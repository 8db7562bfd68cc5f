//! Per-layer (confidence, AUC) profiles of the fine-tuned probes.

use std::path::Path;

use ndarray::{Array4, Axis};

use super::{confidence_mean, Probe, TappedModel};
use crate::error::Result;
use crate::metrics::{auc, LayerPoint};
use crate::num::Scalar;

/// Evaluate every probe over a dataset: one `(confidence, AUC)` record
/// per tap, in depth order. AUC falls back to the 0.5 tie convention
/// when a probe outputs a constant score.
pub fn layer_profile<F: Scalar>(
    model: &TappedModel<F>,
    probes: &[Probe<F>],
    images: &Array4<F>,
    labels: &[u8],
) -> Result<Vec<LayerPoint>> {
    let n = images.len_of(Axis(0));
    let mut scores_per_tap: Vec<Vec<F>> = vec![Vec::with_capacity(n); model.n_taps()];
    let chunk = 64usize;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let pass = model.forward_eval(&batch);
        for (scores, (probe, pooled)) in scores_per_tap
            .iter_mut()
            .zip(probes.iter().zip(&pass.tap_pooled))
        {
            scores.extend(probe.scores(pooled)?.iter().copied());
        }
        start = end;
    }
    let mut out = Vec::with_capacity(model.n_taps());
    for (tap_index, scores) in scores_per_tap.iter().enumerate() {
        let conf = confidence_mean(scores)?.as_f64();
        out.push(LayerPoint {
            tap_index,
            confidence: conf,
            auc: auc(scores, labels)?,
        });
    }
    Ok(out)
}

/// Line-oriented profile record: `tap_index,confidence,auc`.
pub fn write_profile_csv(path: &Path, profile: &[LayerPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tap_index", "confidence", "auc"])?;
    for p in profile {
        w.write_record([
            p.tap_index.to_string(),
            format!("{:.6}", p.confidence),
            format!("{:.6}", p.auc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

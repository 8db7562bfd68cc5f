//! Evaluation metrics: AUC, per-group TPR disparity, paired significance
//! tests, and the per-run evaluation report.

mod auc;
mod tpr;
mod ttest;

pub use auc::auc;
pub use tpr::{delta_tpr, group_assign, Group, TprBreakdown};
pub use ttest::{paired_ttest, TTestResult};

use serde::{Deserialize, Serialize};

/// Per-tap probe summary: mean confidence and AUC at one depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPoint {
    pub tap_index: usize,
    pub confidence: f64,
    pub auc: f64,
}

/// Group TPR breakdown for one shortcut under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutGroupMetrics {
    pub shortcut: String,
    pub tpr_aligned: f64,
    pub tpr_contrasting: f64,
    pub delta_tpr: f64,
}

/// Per-model evaluation results on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Model tag, e.g. `erm`, `ours`, `baseline`.
    pub model: String,
    pub fold_id: usize,
    pub auc: f64,
    /// TPRs for the first declared shortcut (the primary one under test).
    pub tpr_aligned: f64,
    pub tpr_contrasting: f64,
    pub delta_tpr: f64,
    /// Per-shortcut breakdown; one entry per declared shortcut.
    pub group_metrics: Vec<ShortcutGroupMetrics>,
    /// Per-tap (confidence, AUC) profile of the fine-tuned probes.
    pub per_layer: Vec<LayerPoint>,
    /// Optional significance results attached by the report stage.
    pub significance: Option<TTestResult>,
}

impl EvalReport {
    /// Sanity-check the rate invariants (`delta = |a - c|`, rates in [0,1]).
    pub fn validate(&self) -> crate::Result<()> {
        for gm in &self.group_metrics {
            for (name, v) in [
                ("tpr_aligned", gm.tpr_aligned),
                ("tpr_contrasting", gm.tpr_contrasting),
                ("delta_tpr", gm.delta_tpr),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(crate::Error::invalid(name, format!("{v} outside [0,1]")));
                }
            }
            let expect = (gm.tpr_aligned - gm.tpr_contrasting).abs();
            if (gm.delta_tpr - expect).abs() > 1e-12 {
                return Err(crate::Error::invalid(
                    "delta_tpr",
                    format!("{} != |{} - {}|", gm.delta_tpr, gm.tpr_aligned, gm.tpr_contrasting),
                ));
            }
        }
        Ok(())
    }
}

//! Teacher/student distillation: loss algebra, layer pairing, training
//! protocols, and the augmentation baselines.

mod augment;
mod loss;
mod pairing;
mod trainer;

pub use augment::{baseline_augment, AugMethod};
pub use loss::{
    bce_with_logits, kd_loss, kl_divergence, objective_with_grad, total_loss, uniform_reg_loss,
    ObjectiveGrad, PROB_EPS,
};
pub use pairing::{sample_pairing, LayerCount};
pub use trainer::{
    eval_scores, evaluate_model, prepare_pretrained_teacher, stack_samples, train_student,
    train_teacher, EpochRecord, TrainOutcome, Trained,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the per-tap distillation targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    /// Teacher trained on the small curated subset (the default protocol).
    Specialist,
    /// Externally supplied encoder, probes fine-tuned on task data.
    Pretrained,
    /// No teacher: intermediate predictions pulled toward the uniform
    /// distribution.
    UniformRegularizer,
}

/// Per-epoch pairing of student taps to teacher probes plus loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillPlan {
    /// (student tap index, teacher probe index) pairs, both strictly
    /// increasing. Re-sampled each epoch when `n_sampled_layers` is not
    /// `all`.
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
    /// Weight applied to each pair's KL term.
    pub alpha: f64,
    pub lambda_ce: f64,
    pub lambda_kd: f64,
    /// Also distill the final classification head against the teacher's.
    pub include_final_head: bool,
    pub n_sampled_layers: LayerCount,
    pub teacher_mode: TeacherMode,
}

impl Default for DistillPlan {
    fn default() -> Self {
        DistillPlan {
            pairs: Vec::new(),
            alpha: 1.0,
            lambda_ce: 1.0,
            lambda_kd: 1.0,
            include_final_head: true,
            n_sampled_layers: LayerCount::All,
            teacher_mode: TeacherMode::Specialist,
        }
    }
}

impl DistillPlan {
    /// Check the pairing invariants against the given tap/probe counts.
    pub fn validate(&self, n_student_taps: usize, n_teacher_probes: usize) -> Result<()> {
        for w in self.pairs.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
                return Err(Error::invalid(
                    "pairs",
                    format!("indices must be strictly increasing, got {:?}", self.pairs),
                ));
            }
        }
        if let Some(&(s, t)) = self.pairs.last() {
            if s >= n_student_taps || t >= n_teacher_probes {
                return Err(Error::invalid(
                    "pairs",
                    format!(
                        "pair ({s},{t}) out of range for {n_student_taps} taps / {n_teacher_probes} probes"
                    ),
                ));
            }
        }
        if let LayerCount::N(n) = self.n_sampled_layers {
            if self.teacher_mode == TeacherMode::UniformRegularizer {
                if n > n_student_taps {
                    return Err(Error::invalid(
                        "n_sampled_layers",
                        format!("{n} exceeds {n_student_taps} student taps"),
                    ));
                }
            } else if n > n_student_taps.min(n_teacher_probes) {
                return Err(Error::invalid(
                    "n_sampled_layers",
                    format!(
                        "{n} exceeds min({n_student_taps} taps, {n_teacher_probes} probes)"
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Optimization hyperparameters; serialized alongside every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub probe_lr: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Probe epochs per student epoch (the per-epoch refresh).
    pub probe_refresh_epochs: usize,
    /// Probe epochs for the post-training fine-tune (teacher, evaluation).
    pub probe_finetune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.1,
            probe_lr: 0.1,
            max_epochs: 1000,
            early_stop_patience: 15,
            batch_size: 32,
            seed: 0,
            probe_refresh_epochs: 1000,
            probe_finetune_epochs: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.early_stop_patience >= self.max_epochs {
            return Err(Error::invalid(
                "early_stop_patience",
                format!(
                    "patience {} must be below max_epochs {}",
                    self.early_stop_patience, self.max_epochs
                ),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

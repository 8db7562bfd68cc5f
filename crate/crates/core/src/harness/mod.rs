//! Experiment orchestration: configs, the fold/sweep run matrix, teacher
//! caching, result aggregation, tables, and figures.

mod early_stop;
mod experiment;
mod overrides;
mod report;

pub mod plots;

pub use early_stop::{early_stop, EarlyStopper, StopDecision};
pub use experiment::{expand_runs, run_experiment, run_single, RunResult, RunSpec};
pub use overrides::{apply_overrides, valid_keys};
pub use report::{emit_reports, format_cell, summarize, CellStats, SummaryTable};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_manifest, DatasetManifest};
use crate::distill::{AugMethod, DistillPlan, LayerCount, TeacherMode, TrainConfig};
use crate::error::{Error, Result};

/// Training/mitigation method of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// ERM on shortcut-free training data of the same size (reference).
    Baseline,
    /// Plain cross-entropy on the biased data.
    Erm,
    /// ERM plus rotation/flip augmentation.
    Aug,
    Mixup,
    Cutout,
    Cutmix,
    /// Specialist-teacher intermediate distillation.
    Ours,
    /// Distillation from a task-agnostic encoder with task-tuned probes.
    OursPretrained,
    /// Confidence regularization toward uniform at the intermediate taps.
    OursUniform,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Erm => "erm",
            Method::Aug => "aug",
            Method::Mixup => "mixup",
            Method::Cutout => "cutout",
            Method::Cutmix => "cutmix",
            Method::Ours => "ours",
            Method::OursPretrained => "ours_pretrained",
            Method::OursUniform => "ours_uniform",
        }
    }

    pub fn augment(&self) -> AugMethod {
        match self {
            Method::Aug => AugMethod::Aug,
            Method::Mixup => AugMethod::Mixup,
            Method::Cutout => AugMethod::Cutout,
            Method::Cutmix => AugMethod::Cutmix,
            _ => AugMethod::None,
        }
    }

    pub fn needs_teacher(&self) -> bool {
        matches!(self, Method::Ours | Method::OursPretrained)
    }

    pub fn distills(&self) -> bool {
        matches!(
            self,
            Method::Ours | Method::OursPretrained | Method::OursUniform
        )
    }

    pub fn teacher_mode(&self) -> TeacherMode {
        match self {
            Method::OursPretrained => TeacherMode::Pretrained,
            Method::OursUniform => TeacherMode::UniformRegularizer,
            _ => TeacherMode::Specialist,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Sweep axes; an unset axis contributes the manifest/plan default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub prevalence: Option<Vec<f64>>,
    pub teacher_fraction: Option<Vec<f64>>,
    pub contamination: Option<Vec<f64>>,
    pub n_layers: Option<Vec<LayerCount>>,
}

/// One experiment: a dataset, an architecture pair, methods, and sweeps,
/// evaluated with k-fold cross-validation over a fixed test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    /// Inline dataset manifest; alternative to `manifest_path`.
    #[serde(default)]
    pub manifest: Option<DatasetManifest>,
    /// Path to a manifest TOML; overrides `manifest` when set.
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    pub teacher_arch: String,
    pub student_arch: String,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub plan: DistillPlan,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
    /// Checkpoint for the `ours_pretrained` teacher encoder; when unset a
    /// seeded untrained encoder stands in.
    #[serde(default)]
    pub pretrained_teacher_path: Option<PathBuf>,
    /// Output directory; defaults to `<root>/reports/<name>`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_k_folds() -> usize {
    5
}

impl ExperimentConfig {
    /// Load from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::invalid("k_folds", "need at least 2 folds"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "need at least one method"));
        }
        if self.manifest.is_none() && self.manifest_path.is_none() {
            return Err(Error::invalid(
                "manifest",
                "set either `manifest` inline or `manifest_path`",
            ));
        }
        self.train.validate()?;
        if let Some(m) = &self.manifest {
            m.validate()?;
        }
        Ok(())
    }

    /// The manifest, loading `manifest_path` relative to `base` if needed.
    pub fn resolve_manifest(&self, base: &Path) -> Result<DatasetManifest> {
        if let Some(p) = &self.manifest_path {
            let path = if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            };
            return read_manifest(&path);
        }
        Ok(self.manifest.clone().expect("validated"))
    }
}

/// Artifact root: `$SHORTCUT_LAB_HOME` or `./shortcut-lab-home`.
pub fn artifact_root() -> PathBuf {
    std::env::var_os("SHORTCUT_LAB_HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("shortcut-lab-home"))
}

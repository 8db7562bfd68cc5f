//! Seeded two-class synthetic image datasets with parametric shortcut
//! features injected at controlled prevalence.

mod generate;
mod shortcut;
mod splits;
mod store;

pub use generate::generate_base_dataset;
pub use shortcut::{assign_shortcut_mask, inject_shortcut, marked_count, MaskRule};
pub use splits::{build_splits, build_splits_opts, FoldSpec, SplitBundle, SplitOptions};
pub use store::{dataset_dir, read_dataset, read_manifest, write_dataset, write_manifest};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Split assignment of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One labeled image plus its shortcut annotations and split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample<F> {
    pub id: String,
    /// Square intensity grid, every value in `[0, 1]`.
    pub pixels: Array2<F>,
    /// Binary class in `{0, 1}`.
    pub label: u8,
    /// One entry per declared shortcut: present / absent.
    pub shortcut_flags: BTreeMap<String, bool>,
    pub split: Split,
}

impl<F: Scalar> ImageSample<F> {
    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }
}

/// Kind of synthetic bias feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortcutKind {
    /// i.i.d. uniform noise added to every pixel.
    DiffuseNoise,
    /// A square of fixed intensity at a fixed position.
    SquareConstant,
    /// A square of fixed intensity at a seeded random position.
    SquareRandom,
}

/// Parametric description of one synthetic bias feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutSpec {
    pub name: String,
    pub kind: ShortcutKind,
    /// Noise upper bound (diffuse) or square intensity (localized).
    pub amplitude: f64,
    /// Square edge length in pixels; square kinds only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub square_side: Option<usize>,
    /// Top-left (row, col); `square_constant` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<(usize, usize)>,
    /// Class the shortcut correlates with in training data.
    pub target_class: u8,
    /// Fraction of target-class training samples carrying the feature.
    pub prevalence: f64,
}

impl ShortcutSpec {
    /// Validate the spec against an image side length.
    pub fn validate(&self, image_side: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prevalence) {
            return Err(Error::invalid(
                "prevalence",
                format!("{} outside [0, 1]", self.prevalence),
            ));
        }
        if self.target_class > 1 {
            return Err(Error::invalid(
                "target_class",
                format!("{} not in {{0, 1}}", self.target_class),
            ));
        }
        match self.kind {
            ShortcutKind::DiffuseNoise => {
                if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
                    return Err(Error::invalid(
                        "amplitude",
                        format!("diffuse noise needs amplitude in (0, 1], got {}", self.amplitude),
                    ));
                }
            }
            ShortcutKind::SquareConstant | ShortcutKind::SquareRandom => {
                let side = self.square_side.ok_or_else(|| {
                    Error::invalid("square_side", "required for square shortcuts")
                })?;
                if side == 0 {
                    return Err(Error::invalid("square_side", "must be >= 1"));
                }
                if side > image_side {
                    return Err(Error::invalid(
                        "square_side",
                        format!("{side} exceeds image side {image_side}"),
                    ));
                }
                if self.kind == ShortcutKind::SquareConstant {
                    let (r, c) = self.position.ok_or_else(|| {
                        Error::invalid("position", "required for square_constant")
                    })?;
                    if r + side > image_side || c + side > image_side {
                        return Err(Error::invalid(
                            "position",
                            format!(
                                "square at ({r}, {c}) with side {side} leaves image bounds {image_side}"
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the task-relevant generative signal.
///
/// Every image contains an elliptical blob on a cluttered background. A
/// per-image latent severity drives both the blob's intensity contrast
/// and its texture roughness; the class-conditional severity ranges
/// overlap, so neither a pixel-linear model nor a perfect severity
/// reader can fully separate the classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignal {
    /// Mean background intensity.
    pub background_level: f64,
    /// Half-width of the per-pixel uniform background noise.
    pub background_noise: f64,
    /// Blob intensity at severity 0.
    pub blob_contrast: f64,
    /// Extra blob intensity at severity 1 (the contrast cue).
    pub contrast_gap: f64,
    /// In-blob speckle sigma at severity 0.
    pub texture_sigma: f64,
    /// Extra speckle sigma at severity 1 (the texture cue).
    pub texture_gap: f64,
    /// Class 0 severities are uniform on [0, this].
    pub severity_max_class0: f64,
    /// Class 1 severities are uniform on [this, 1].
    pub severity_min_class1: f64,
    /// Blob semi-axis range as fractions of the image side.
    pub radius_min_frac: f64,
    pub radius_max_frac: f64,
}

impl Default for ClassSignal {
    fn default() -> Self {
        ClassSignal {
            background_level: 0.35,
            background_noise: 0.10,
            blob_contrast: 0.06,
            contrast_gap: 0.12,
            texture_sigma: 0.01,
            texture_gap: 0.12,
            severity_max_class0: 0.68,
            severity_min_class1: 0.38,
            radius_min_frac: 0.16,
            radius_max_frac: 0.30,
        }
    }
}

/// Sample counts per class for each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Split correlation structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Shortcuts correlated with class in training; present in exactly
    /// half of each class in validation and test.
    CorrelatedTrainBalancedEval,
    /// Validation and test carry the training prevalence (no unbiased
    /// validation data available).
    SamePrevalenceAllSplits,
}

/// Full description of one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub image_side: usize,
    pub n_per_class: SplitCounts,
    #[serde(default)]
    pub class_signal: ClassSignal,
    #[serde(default)]
    pub shortcuts: Vec<ShortcutSpec>,
    pub split_policy: SplitPolicy,
    /// Fraction of the training split reserved for the specialist teacher.
    pub teacher_subset_fraction: f64,
    /// Fraction of the teacher subset's target-class samples that carry
    /// the shortcut (residual contamination of the curated data).
    pub teacher_contamination: f64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.image_side < 16 {
            return Err(Error::invalid(
                "image_side",
                format!("{} below the minimum of 16", self.image_side),
            ));
        }
        if self.n_per_class.train == 0 {
            return Err(Error::invalid("n_per_class.train", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.teacher_subset_fraction) {
            return Err(Error::invalid(
                "teacher_subset_fraction",
                format!("{} outside [0, 1)", self.teacher_subset_fraction),
            ));
        }
        if !(0.0..=1.0).contains(&self.teacher_contamination) {
            return Err(Error::invalid(
                "teacher_contamination",
                format!("{} outside [0, 1]", self.teacher_contamination),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.shortcuts {
            s.validate(self.image_side)?;
            if !seen.insert(s.name.clone()) {
                return Err(Error::invalid(
                    "shortcuts",
                    format!("duplicate shortcut name `{}`", s.name),
                ));
            }
        }
        Ok(())
    }
}

//! Run-matrix expansion, execution, caching, and artifact layout.
//!
//! Artifact root layout:
//!
//! ```text
//! <root>/teachers/<key>.ckpt.json      cached teachers, content-addressed
//! <root>/runs/<run_id>/config.json     resolved run spec + seed chain
//! <root>/runs/<run_id>/student.ckpt.json
//! <root>/runs/<run_id>/history.jsonl   one epoch record per line
//! <root>/runs/<run_id>/report.json     the EvalReport
//! <root>/runs/<run_id>/profile.csv     per-tap confidence/AUC
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, Method};
use crate::data::{build_splits_opts, DatasetManifest, FoldSpec, ImageSample, SplitOptions};
use crate::distill::{
    evaluate_model, prepare_pretrained_teacher, train_student, train_teacher, DistillPlan,
    LayerCount, TrainConfig,
};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{
    build_model, finetune_probes, load_checkpoint, save_checkpoint, write_profile_csv, Probe,
    TappedModel,
};
use crate::seed::{derive_seed, SeedRecord};
use crate::DefaultScalar;

/// Fully resolved description of one run; hashing it yields the run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub config_name: String,
    pub method: Method,
    pub fold: usize,
    pub k_folds: usize,
    pub prevalence: Option<f64>,
    pub teacher_fraction: Option<f64>,
    pub contamination: Option<f64>,
    pub n_layers: Option<LayerCount>,
    pub manifest: DatasetManifest,
    pub plan: DistillPlan,
    pub train: TrainConfig,
    pub teacher_arch: String,
    pub student_arch: String,
    pub pretrained_teacher_path: Option<PathBuf>,
    /// How every seed used by this run derives from the experiment seed.
    pub seed_chain: Vec<SeedRecord>,
}

impl RunSpec {
    /// Content-addressed run id.
    pub fn run_id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serializable spec");
        let mut h = Sha256::new();
        h.update(&bytes);
        let hex = crate::seed::hex_digest(&h.finalize());
        hex[..16].to_string()
    }

    /// Short human label for tables and logs.
    pub fn axis_label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(p) = self.prevalence {
            parts.push(format!("p={p:.2}"));
        }
        if let Some(tf) = self.teacher_fraction {
            parts.push(format!("tf={tf:.2}"));
        }
        if let Some(c) = self.contamination {
            parts.push(format!("cont={c:.2}"));
        }
        if let Some(n) = self.n_layers {
            match n {
                LayerCount::All => parts.push("n=all".into()),
                LayerCount::N(k) => parts.push(format!("n={k}")),
            }
        }
        if parts.is_empty() {
            "default".into()
        } else {
            parts.join(",")
        }
    }
}

/// Outcome of one run; failures are recorded, not fatal to the matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub spec: RunSpec,
    pub run_id: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    pub cached: bool,
}

fn axis_points<T: Copy>(axis: &Option<Vec<T>>) -> Vec<Option<T>> {
    match axis {
        None => vec![None],
        Some(values) => values.iter().map(|&v| Some(v)).collect(),
    }
}

/// Expand an experiment config into its deterministic run matrix:
/// every sweep-axis combination times every method times every fold.
pub fn expand_runs(config: &ExperimentConfig, base_dir: &Path) -> Result<Vec<RunSpec>> {
    config.validate()?;
    let manifest = config.resolve_manifest(base_dir)?;
    let mut runs = Vec::new();
    for &prevalence in &axis_points(&config.sweep.prevalence) {
        for &teacher_fraction in &axis_points(&config.sweep.teacher_fraction) {
            for &contamination in &axis_points(&config.sweep.contamination) {
                for &n_layers in &axis_points(&config.sweep.n_layers) {
                    for &method in &config.methods {
                        for fold in 0..config.k_folds {
                            let mut m = manifest.clone();
                            if let Some(p) = prevalence {
                                for s in &mut m.shortcuts {
                                    s.prevalence = p;
                                }
                            }
                            if let Some(tf) = teacher_fraction {
                                m.teacher_subset_fraction = tf;
                            }
                            if let Some(c) = contamination {
                                m.teacher_contamination = c;
                            }
                            m.validate()?;
                            let mut plan = config.plan.clone();
                            if let Some(n) = n_layers {
                                plan.n_sampled_layers = n;
                            }
                            plan.teacher_mode = method.teacher_mode();

                            let mut spec = RunSpec {
                                config_name: config.name.clone(),
                                method,
                                fold,
                                k_folds: config.k_folds,
                                prevalence,
                                teacher_fraction,
                                contamination,
                                n_layers,
                                manifest: m,
                                plan,
                                train: config.train.clone(),
                                teacher_arch: config.teacher_arch.clone(),
                                student_arch: config.student_arch.clone(),
                                pretrained_teacher_path: config.pretrained_teacher_path.clone(),
                                seed_chain: Vec::new(),
                            };
                            let axis = spec.axis_label();
                            let fold_tag = fold.to_string();
                            let student_seed = SeedRecord::new(
                                config.seed,
                                &["run", method.tag(), &axis, &fold_tag],
                            );
                            spec.train.seed = student_seed.derived;
                            spec.seed_chain.push(student_seed);
                            runs.push(spec);
                        }
                    }
                }
            }
        }
    }
    Ok(runs)
}

fn sample_digest(samples: &[ImageSample<DefaultScalar>]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.id.as_bytes());
        h.update([s.label]);
        for (name, &flag) in &s.shortcut_flags {
            h.update(name.as_bytes());
            h.update([u8::from(flag)]);
        }
        for &v in s.pixels.iter() {
            h.update(v.to_le_bytes());
        }
    }
    crate::seed::hex_digest(&h.finalize())
}

/// Teacher cache key: the data the teacher actually sees, its
/// architecture, and its training configuration. Runs whose manifests
/// differ only in student-side knobs share the teacher; anything that
/// changes the teacher's inputs changes the key.
fn teacher_cache_key(
    mode_tag: &str,
    teacher_train: &[ImageSample<DefaultScalar>],
    val: &[ImageSample<DefaultScalar>],
    arch: &str,
    train: &TrainConfig,
) -> String {
    let mut h = Sha256::new();
    h.update(mode_tag.as_bytes());
    h.update(sample_digest(teacher_train).as_bytes());
    h.update(sample_digest(val).as_bytes());
    h.update(arch.as_bytes());
    h.update(serde_json::to_vec(train).expect("config json"));
    let hex = crate::seed::hex_digest(&h.finalize());
    hex[..16].to_string()
}

type TeacherPair = (TappedModel<DefaultScalar>, Vec<Probe<DefaultScalar>>);

fn obtain_teacher(
    spec: &RunSpec,
    bundle_teacher: &[ImageSample<DefaultScalar>],
    bundle: &crate::data::SplitBundle<DefaultScalar>,
    root: &Path,
) -> Result<(TeacherPair, String)> {
    let mode_tag = spec.method.tag();
    let mut teacher_train_cfg = spec.train.clone();
    // the teacher seed must not depend on method or student-side axes so
    // identical teacher inputs map to identical teachers
    let teacher_axis = format!(
        "tf={:?},cont={:?},fold={}",
        spec.teacher_fraction, spec.contamination, spec.fold
    );
    teacher_train_cfg.seed = derive_seed(spec.train.seed, &["teacher-data", &teacher_axis]);
    // key on data, not on the seed path (cache correctness is by inputs)
    let mut cfg_for_key = teacher_train_cfg.clone();
    cfg_for_key.seed = 0;
    let key = teacher_cache_key(
        mode_tag,
        bundle_teacher,
        &bundle.val,
        &spec.teacher_arch,
        &cfg_for_key,
    );
    let path = root.join("teachers").join(format!("{key}.ckpt.json"));
    if path.exists() {
        let (model, probes) = load_checkpoint::<DefaultScalar>(&path)?;
        return Ok(((model, probes), key));
    }
    // deterministic seed per key so cache hit and recompute agree
    teacher_train_cfg.seed = derive_seed(spec.manifest.seed, &["teacher", &key]);
    let pair = match spec.method {
        Method::OursPretrained => {
            let side = spec.manifest.image_side;
            let encoder = match &spec.pretrained_teacher_path {
                Some(p) => load_checkpoint::<DefaultScalar>(p)?.0,
                None => build_model(
                    &spec.teacher_arch,
                    side,
                    derive_seed(spec.manifest.seed, &["pretrained-encoder"]),
                )?,
            };
            prepare_pretrained_teacher(encoder, bundle_teacher, &teacher_train_cfg)?
        }
        _ => {
            let trained = train_teacher(bundle, &spec.teacher_arch, &teacher_train_cfg)?;
            (trained.model, trained.probes)
        }
    };
    save_checkpoint(&path, &pair.0, &pair.1)?;
    Ok((pair, key))
}

/// Execute one run, using cached artifacts when the same run id already
/// completed. Returns the report and whether it was a cache hit.
pub fn run_single(spec: &RunSpec, root: &Path) -> Result<(EvalReport, bool)> {
    let run_id = spec.run_id();
    let run_dir = root.join("runs").join(&run_id);
    let report_path = run_dir.join("report.json");
    if report_path.exists() {
        let bytes = fs::read(&report_path)?;
        let report: EvalReport = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            path: report_path.clone(),
            reason: e.to_string(),
        })?;
        return Ok((report, true));
    }
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.json"), serde_json::to_vec_pretty(spec)?)?;

    let opts = SplitOptions {
        clean_student_train: spec.method == Method::Baseline,
        fold: Some(FoldSpec {
            k: spec.k_folds,
            index: spec.fold,
        }),
    };
    let bundle = build_splits_opts::<DefaultScalar>(&spec.manifest, opts)?;

    let teacher: Option<(TeacherPair, String)> = if spec.method.needs_teacher() {
        Some(obtain_teacher(spec, &bundle.teacher_train, &bundle, root)?)
    } else {
        None
    };
    if let Some((_, key)) = &teacher {
        fs::write(run_dir.join("teacher.ref"), key)?;
    }

    let mut plan = spec.plan.clone();
    if !spec.method.distills() {
        plan.lambda_kd = 0.0;
    }
    let teacher_ref = teacher.as_ref().map(|((m, p), _)| (m, p.as_slice()));
    let trained = train_student(
        &bundle,
        &spec.student_arch,
        teacher_ref,
        &plan,
        spec.method.augment(),
        &spec.train,
    )?;

    // persist history
    {
        let mut lines = String::new();
        for rec in &trained.history {
            lines.push_str(&serde_json::to_string(rec)?);
            lines.push('\n');
        }
        fs::write(run_dir.join("history.jsonl"), lines)?;
    }

    // post-training probe fine-tune for profiling, then evaluate
    let model = trained.model;
    let mut probes = trained.probes;
    let (train_images, train_labels) = crate::distill::stack_samples(&bundle.student_train);
    finetune_probes(
        &model,
        &mut probes,
        &train_images,
        &train_labels,
        spec.train.probe_lr,
        spec.train.probe_finetune_epochs,
    )?;
    save_checkpoint(&run_dir.join("student.ckpt.json"), &model, &probes)?;

    let report = evaluate_model(
        &model,
        &probes,
        &bundle.test,
        &spec.manifest.shortcuts,
        spec.method.tag(),
        spec.fold,
    )?;
    write_profile_csv(&run_dir.join("profile.csv"), &report.per_layer)?;
    fs::write(&report_path, serde_json::to_vec_pretty(&report)?)?;
    Ok((report, false))
}

/// Run the full matrix sequentially; failures are recorded per run and
/// the matrix continues. A summary (including failures) is written under
/// `<root>/runs/`.
pub fn run_experiment(config: &ExperimentConfig, root: &Path, base_dir: &Path) -> Result<Vec<RunResult>> {
    let specs = expand_runs(config, base_dir)?;
    let mut results = Vec::with_capacity(specs.len());
    for spec in specs {
        let run_id = spec.run_id();
        log::info!(
            "run {run_id}: {} {} fold {} [{}]",
            spec.config_name,
            spec.method,
            spec.fold,
            spec.axis_label()
        );
        match run_single(&spec, root) {
            Ok((report, cached)) => results.push(RunResult {
                spec,
                run_id,
                report: Some(report),
                error: None,
                cached,
            }),
            Err(e) => {
                log::error!("run {run_id} failed: {e}");
                results.push(RunResult {
                    spec,
                    run_id,
                    report: None,
                    error: Some(e.to_string()),
                    cached: false,
                });
            }
        }
    }
    let summary_path = root.join("runs").join(format!("{}.summary.json", config.name));
    if let Some(parent) = summary_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&summary_path, serde_json::to_vec_pretty(&results)?)?;
    Ok(results)
}

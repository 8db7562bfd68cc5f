//! Teacher and student training protocols.
//!
//! The teacher is trained to completion with plain cross-entropy and
//! early stopping, frozen, and only then are its probes fine-tuned. The
//! student minimizes `lambda_ce * CE + lambda_kd * KD` each epoch, after
//! which its encoder and head are frozen and the probes are refreshed on
//! the student's own training split. Probe parameters never receive
//! gradient during the encoder update; they only route the distillation
//! gradient into the tapped feature maps.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{baseline_augment, AugMethod};
use super::loss::objective_with_grad;
use super::pairing::{sample_pairing, LayerCount};
use super::{DistillPlan, TeacherMode, TrainConfig};
use crate::data::{ImageSample, ShortcutSpec, SplitBundle};
use crate::error::{Error, Result};
use crate::harness::EarlyStopper;
use crate::metrics::{auc, delta_tpr, group_assign, EvalReport, Group, ShortcutGroupMetrics};
use crate::model::{
    build_model, finetune_probes, init_probes, layer_profile, Probe, TappedModel,
};
use crate::nn::AdamW;
use crate::num::{sigmoid, Scalar};
use crate::seed::{derive_seed, rng_for};

/// Per-epoch training record, persisted as one JSON line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ce: f64,
    pub train_kd: f64,
    pub train_total: f64,
    pub val_ce: f64,
    pub val_auc: f64,
    /// The (student tap, teacher probe) pairing used this epoch.
    pub pairing: Vec<(usize, usize)>,
}

/// A trained model restored to its best-validation epoch.
pub struct Trained<F> {
    pub model: TappedModel<F>,
    pub probes: Vec<Probe<F>>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose checkpoint is returned.
    pub best_epoch: usize,
    /// 1-based epoch at which training stopped.
    pub final_epoch: usize,
}

/// Alias kept for readability at call sites that only need the outcome.
pub type TrainOutcome<F> = Trained<F>;

/// Stack samples into a `(n, 1, side, side)` batch plus labels.
pub fn stack_samples<F: Scalar>(samples: &[ImageSample<F>]) -> (Array4<F>, Vec<u8>) {
    let n = samples.len();
    let side = if n == 0 { 0 } else { samples[0].side() };
    let mut x = Array4::zeros((n, 1, side, side));
    let mut labels = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        x.slice_mut(ndarray::s![i, 0, .., ..]).assign(&s.pixels);
        labels.push(s.label);
    }
    (x, labels)
}

fn labels_to_soft<F: Scalar>(labels: &[u8]) -> Array1<F> {
    labels.iter().map(|&y| F::f(y as f64)).collect()
}

/// Teacher-side distillation targets, precomputed once per run: the
/// teacher is frozen, so its outputs on the fixed training set never
/// change.
struct TeacherTargets<F> {
    /// (n_probes, n_samples) sigmoid scores.
    probe_scores: Array2<F>,
    /// (n_samples,) final-head sigmoid scores.
    head_scores: Array1<F>,
    n_probes: usize,
}

impl<F: Scalar> TeacherTargets<F> {
    fn compute(teacher: &TappedModel<F>, probes: &[Probe<F>], images: &Array4<F>) -> Result<Self> {
        let n = images.len_of(Axis(0));
        let mut probe_scores = Array2::zeros((probes.len(), n));
        let mut head_scores = Array1::zeros(n);
        let chunk = 64usize;
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let batch = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let pass = teacher.forward_eval(&batch);
            for (p, probe) in probes.iter().enumerate() {
                let scores = probe.scores(&pass.tap_pooled[probe.tap_index])?;
                probe_scores
                    .slice_mut(ndarray::s![p, start..end])
                    .assign(&scores);
            }
            head_scores
                .slice_mut(ndarray::s![start..end])
                .assign(&pass.logits.mapv(sigmoid));
            start = end;
        }
        Ok(TeacherTargets {
            probe_scores,
            head_scores,
            n_probes: probes.len(),
        })
    }

    /// Uniform targets: every probe and the head answer (0.5, 0.5).
    fn uniform(n_probes: usize, n_samples: usize) -> Self {
        TeacherTargets {
            probe_scores: Array2::from_elem((n_probes, n_samples), F::half()),
            head_scores: Array1::from_elem(n_samples, F::half()),
            n_probes,
        }
    }

    fn dist_rows(&self, probe: usize, idx: &[usize]) -> Array2<F> {
        let mut q = Array2::zeros((idx.len(), 2));
        for (row, &i) in idx.iter().enumerate() {
            let g = self.probe_scores[[probe, i]];
            q[[row, 0]] = F::one() - g;
            q[[row, 1]] = g;
        }
        q
    }

    fn head_rows(&self, idx: &[usize]) -> Array2<F> {
        let mut q = Array2::zeros((idx.len(), 2));
        for (row, &i) in idx.iter().enumerate() {
            let g = self.head_scores[i];
            q[[row, 0]] = F::one() - g;
            q[[row, 1]] = g;
        }
        q
    }
}

fn gather_batch<F: Scalar>(images: &Array4<F>, idx: &[usize]) -> Array4<F> {
    let (_, c, h, w) = images.dim();
    let mut out = Array4::zeros((idx.len(), c, h, w));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), row)
            .assign(&images.index_axis(Axis(0), i));
    }
    out
}

/// Mean validation binary cross-entropy and AUC (inference mode).
fn validate<F: Scalar>(
    model: &TappedModel<F>,
    images: &Array4<F>,
    labels: &[u8],
) -> Result<(f64, f64)> {
    let scores = eval_scores(model, images);
    let mut ce = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let p = s.as_f64().clamp(1e-7, 1.0 - 1e-7);
        ce -= (y as f64) * p.ln() + (1.0 - y as f64) * (1.0 - p).ln();
    }
    ce /= labels.len() as f64;
    let auc_v = auc(&scores, labels)?;
    Ok((ce, auc_v))
}

/// Final-head sigmoid scores over a dataset, batched.
pub fn eval_scores<F: Scalar>(model: &TappedModel<F>, images: &Array4<F>) -> Vec<F> {
    let n = images.len_of(Axis(0));
    let mut out = Vec::with_capacity(n);
    let chunk = 64usize;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let pass = model.forward_eval(&batch);
        out.extend(pass.logits.iter().map(|&z| sigmoid(z)));
        start = end;
    }
    out
}

struct LoopSpec<'a, F> {
    role: &'a str,
    plan: DistillPlan,
    teacher: Option<(&'a TappedModel<F>, &'a [Probe<F>])>,
    augment: AugMethod,
    /// Refresh probes on the training split after each epoch (student
    /// protocol); the teacher fits probes only after training.
    refresh_probes: bool,
}

fn kd_active(plan: &DistillPlan) -> bool {
    plan.lambda_kd != 0.0
        && (plan.include_final_head
            || !matches!(plan.n_sampled_layers, LayerCount::N(0))
            || !plan.pairs.is_empty())
}

/// The shared epoch loop. Returns the best-validation model.
fn run_training<F: Scalar>(
    mut model: TappedModel<F>,
    train_images: Array4<F>,
    train_labels: Vec<u8>,
    val_images: Array4<F>,
    val_labels: Vec<u8>,
    config: &TrainConfig,
    spec: LoopSpec<'_, F>,
) -> Result<Trained<F>> {
    config.validate()?;
    if train_labels.is_empty() {
        return Err(Error::EmptyInput("training split".into()));
    }
    if val_labels.is_empty() {
        return Err(Error::EmptyInput("validation split".into()));
    }

    let kd = kd_active(&spec.plan);
    let n_taps = model.n_taps();
    let teacher_targets: Option<TeacherTargets<F>> = if kd {
        match spec.plan.teacher_mode {
            TeacherMode::UniformRegularizer => {
                Some(TeacherTargets::uniform(n_taps, train_labels.len()))
            }
            TeacherMode::Specialist | TeacherMode::Pretrained => {
                let (teacher, probes) = spec.teacher.ok_or_else(|| {
                    Error::invalid("teacher", "specialist/pretrained mode needs a teacher")
                })?;
                spec.plan.validate(n_taps, probes.len())?;
                Some(TeacherTargets::compute(teacher, probes, &train_images)?)
            }
        }
    } else {
        None
    };

    let mut probes = init_probes(&model);
    if spec.refresh_probes {
        // prime the normalization running statistics so the initial probe
        // fit (and the first validation pass) sees realistic features
        let n_train = train_labels.len();
        let mut start = 0;
        while start < n_train {
            let end = (start + config.batch_size).min(n_train);
            if end - start >= 2 {
                let batch = train_images
                    .slice(ndarray::s![start..end, .., .., ..])
                    .to_owned();
                let _ = model.forward_train(&batch);
            }
            start = end;
        }
        // fit the probes on the initial embeddings so the first epoch's
        // distillation gradient already has a conduit into the encoder
        finetune_probes(
            &model,
            &mut probes,
            &train_images,
            &train_labels,
            config.probe_lr,
            config.probe_refresh_epochs,
        )?;
    }
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut stopper = EarlyStopper::new(config.early_stop_patience, config.max_epochs);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(Vec<(String, Vec<f64>)>, Vec<Probe<F>>)> = None;

    let n = train_labels.len();
    let base_seed = config.seed;
    for epoch in 1..=config.max_epochs {
        let epoch_tag = format!("{}", epoch);
        // per-epoch pairing
        let pairing: Vec<(usize, usize)> = if kd {
            match (&teacher_targets, spec.plan.n_sampled_layers) {
                (Some(t), LayerCount::All) => {
                    sample_pairing(n_taps, t.n_probes, LayerCount::All, 0)?
                }
                (Some(t), LayerCount::N(0)) => {
                    let _ = t;
                    Vec::new()
                }
                (Some(t), LayerCount::N(k)) => sample_pairing(
                    n_taps,
                    t.n_probes,
                    LayerCount::N(k),
                    derive_seed(base_seed, &[spec.role, "pairing", &epoch_tag]),
                )?,
                (None, _) => Vec::new(),
            }
        } else {
            Vec::new()
        };

        // shuffled batches
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng_for(base_seed, &[spec.role, "shuffle", &epoch_tag]);
        order.shuffle(&mut shuffle_rng);
        let mut aug_rng = rng_for(base_seed, &[spec.role, "augment", &epoch_tag]);

        let mut ep_ce = 0.0;
        let mut ep_kd = 0.0;
        let mut ep_total = 0.0;
        let mut n_batches = 0usize;
        for batch_idx in order.chunks(config.batch_size) {
            if batch_idx.len() < 2 {
                continue; // batch statistics need at least two samples
            }
            let x = gather_batch(&train_images, batch_idx);
            let y_hard: Vec<u8> = batch_idx.iter().map(|&i| train_labels[i]).collect();
            let mut targets = labels_to_soft::<F>(&y_hard);
            let x = if spec.augment == AugMethod::None {
                x
            } else {
                let (xa, ya) = baseline_augment(&x, &targets, spec.augment, &mut aug_rng)?;
                targets = ya;
                xa
            };

            model.zero_grad();
            let pass = model.forward_train(&x);

            // student tap logits for the paired taps
            let mut tap_logits: Vec<Array1<F>> = Vec::with_capacity(pairing.len());
            let mut teacher_tap_dists: Vec<Array2<F>> = Vec::with_capacity(pairing.len());
            if let Some(tt) = &teacher_targets {
                for &(s_tap, t_probe) in &pairing {
                    let pooled = crate::nn::gap_forward(&pass.taps[s_tap]);
                    tap_logits.push(probes[s_tap].logits(&pooled)?);
                    teacher_tap_dists.push(tt.dist_rows(t_probe, batch_idx));
                }
            }
            let teacher_final = match (&teacher_targets, spec.plan.include_final_head) {
                (Some(tt), true) if spec.plan.teacher_mode != TeacherMode::UniformRegularizer => {
                    Some(tt.head_rows(batch_idx))
                }
                _ => None,
            };

            let grads = objective_with_grad(
                &pass.logits,
                &targets,
                &tap_logits,
                &teacher_tap_dists,
                teacher_final.as_ref(),
                &spec.plan,
            )
            .map_err(|e| match e {
                Error::TrainingDiverged { detail, .. } => Error::TrainingDiverged {
                    epoch,
                    detail: format!(
                        "{} ({} role, batch of {}, pairing {:?})",
                        detail,
                        spec.role,
                        batch_idx.len(),
                        pairing
                    ),
                },
                other => other,
            })?;

            // route probe-logit gradients into pooled tap features
            let mut tap_pooled_grads: Vec<Option<Array2<F>>> = vec![None; n_taps];
            for (pair_no, &(s_tap, _)) in pairing.iter().enumerate() {
                let dz = &grads.d_taps[pair_no];
                let w = &probes[s_tap].weight;
                let mut dpooled = Array2::zeros((dz.len(), w.len()));
                for (row, &g) in dz.iter().enumerate() {
                    for (col, &wc) in w.iter().enumerate() {
                        dpooled[[row, col]] = g * wc;
                    }
                }
                tap_pooled_grads[s_tap] = Some(dpooled);
            }

            model.backward(&pass, &grads.d_final, tap_pooled_grads);
            let mut params = model.params_mut();
            optimizer.step(&mut params);

            ep_ce += grads.ce.as_f64();
            ep_kd += grads.kd.as_f64();
            ep_total += grads.total.as_f64();
            n_batches += 1;
        }
        if n_batches == 0 {
            return Err(Error::invalid(
                "batch_size",
                format!("no usable batches of size >= 2 from {n} samples"),
            ));
        }

        // freeze, refresh probes on the training split
        if spec.refresh_probes {
            finetune_probes(
                &model,
                &mut probes,
                &train_images,
                &train_labels,
                config.probe_lr,
                config.probe_refresh_epochs,
            )?;
        }

        let (val_ce, val_auc) = validate(&model, &val_images, &val_labels)?;
        history.push(EpochRecord {
            epoch,
            train_ce: ep_ce / n_batches as f64,
            train_kd: ep_kd / n_batches as f64,
            train_total: ep_total / n_batches as f64,
            val_ce,
            val_auc,
            pairing: pairing.clone(),
        });

        let decision = stopper.record(val_ce);
        if decision.improved {
            best = Some((model.state(), probes.clone()));
        }
        if decision.stop {
            break;
        }
    }

    let (best_state, best_probes) = best.expect("at least one epoch ran");
    model.load_state(best_state)?;
    Ok(Trained {
        model,
        probes: best_probes,
        best_epoch: stopper.best_epoch(),
        final_epoch: history.len(),
        history,
    })
}

fn check_class_balance(labels: &[u8], what: &str) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || pos.abs_diff(neg) > 1 {
        return Err(Error::invalid(
            what,
            format!("expected class balance, got {pos} positive / {neg} negative"),
        ));
    }
    Ok(())
}

/// Train the specialist teacher: cross-entropy with early stopping on
/// validation loss, then freeze and fine-tune the probes on the teacher's
/// own training split.
pub fn train_teacher<F: Scalar>(
    bundle: &SplitBundle<F>,
    arch: &str,
    config: &TrainConfig,
) -> Result<Trained<F>> {
    let (train_images, train_labels) = stack_samples(&bundle.teacher_train);
    if train_labels.is_empty() {
        return Err(Error::EmptyInput("teacher training split".into()));
    }
    check_class_balance(&train_labels, "teacher split")?;
    let (val_images, val_labels) = stack_samples(&bundle.val);

    let side = bundle.teacher_train[0].side();
    let model = build_model::<F>(arch, side, derive_seed(config.seed, &["teacher"]))?;
    let mut trained = run_training(
        model,
        train_images.clone(),
        train_labels.clone(),
        val_images,
        val_labels,
        config,
        LoopSpec {
            role: "teacher",
            plan: DistillPlan {
                lambda_kd: 0.0,
                include_final_head: false,
                ..DistillPlan::default()
            },
            teacher: None,
            augment: AugMethod::None,
            refresh_probes: false,
        },
    )?;
    finetune_probes(
        &trained.model,
        &mut trained.probes,
        &train_images,
        &train_labels,
        config.probe_lr,
        config.probe_finetune_epochs,
    )?;
    Ok(trained)
}

/// Fine-tune probes for an externally supplied encoder without ever
/// training the encoder on task data (the pretrained-teacher ablation).
pub fn prepare_pretrained_teacher<F: Scalar>(
    model: TappedModel<F>,
    task_samples: &[ImageSample<F>],
    config: &TrainConfig,
) -> Result<(TappedModel<F>, Vec<Probe<F>>)> {
    let (images, labels) = stack_samples(task_samples);
    let mut probes = init_probes(&model);
    finetune_probes(
        &model,
        &mut probes,
        &images,
        &labels,
        config.probe_lr,
        config.probe_finetune_epochs,
    )?;
    Ok((model, probes))
}

/// Train the student. `teacher` carries the frozen teacher model and its
/// fine-tuned probes for `specialist`/`pretrained` modes; it is unused
/// (and may be `None`) for `uniform_regularizer` or when `lambda_kd` is
/// zero, which degenerates to plain cross-entropy training.
pub fn train_student<F: Scalar>(
    bundle: &SplitBundle<F>,
    arch: &str,
    teacher: Option<(&TappedModel<F>, &[Probe<F>])>,
    plan: &DistillPlan,
    augment: AugMethod,
    config: &TrainConfig,
) -> Result<Trained<F>> {
    let (train_images, train_labels) = stack_samples(&bundle.student_train);
    if train_labels.is_empty() {
        return Err(Error::EmptyInput("student training split".into()));
    }
    let (val_images, val_labels) = stack_samples(&bundle.val);
    let side = bundle.student_train[0].side();
    let model = build_model::<F>(arch, side, derive_seed(config.seed, &["student"]))?;
    // fail on incompatible plans before any training
    if kd_active(plan) && plan.teacher_mode != TeacherMode::UniformRegularizer {
        let probes = teacher
            .map(|(_, p)| p.len())
            .ok_or_else(|| Error::invalid("teacher", "plan requires a teacher checkpoint"))?;
        plan.validate(model.n_taps(), probes)?;
    }
    run_training(
        model,
        train_images,
        train_labels,
        val_images,
        val_labels,
        config,
        LoopSpec {
            role: "student",
            plan: plan.clone(),
            teacher,
            augment,
            refresh_probes: true,
        },
    )
}

/// Evaluate a trained model on a test split: overall AUC, per-shortcut
/// group TPRs at threshold 0.5, and the per-layer probe profile.
pub fn evaluate_model<F: Scalar>(
    model: &TappedModel<F>,
    probes: &[Probe<F>],
    test: &[ImageSample<F>],
    shortcuts: &[ShortcutSpec],
    model_tag: &str,
    fold_id: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test split".into()));
    }
    let (images, labels) = stack_samples(test);
    let scores = eval_scores(model, &images);
    let auc_v = auc(&scores, &labels)?;

    let mut group_metrics = Vec::new();
    for spec in shortcuts {
        let groups: Vec<Group> = test
            .iter()
            .map(|s| group_assign(s.label, &s.shortcut_flags, &spec.name, spec.target_class))
            .collect::<Result<_>>()?;
        let b = delta_tpr(&scores, &labels, &groups, F::half())?;
        group_metrics.push(ShortcutGroupMetrics {
            shortcut: spec.name.clone(),
            tpr_aligned: b.tpr_aligned,
            tpr_contrasting: b.tpr_contrasting,
            delta_tpr: b.delta,
        });
    }
    let per_layer = layer_profile(model, probes, &images, &labels)?;
    let (tpr_aligned, tpr_contrasting, delta) = group_metrics
        .first()
        .map(|g| (g.tpr_aligned, g.tpr_contrasting, g.delta_tpr))
        .unwrap_or((0.0, 0.0, 0.0));
    let report = EvalReport {
        model: model_tag.to_string(),
        fold_id,
        auc: auc_v,
        tpr_aligned,
        tpr_contrasting,
        delta_tpr: delta,
        group_metrics,
        per_layer,
        significance: None,
    };
    report.validate()?;
    Ok(report)
}

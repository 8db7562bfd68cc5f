//! Desk-scale calibration runs: prints the signal difficulty (linear
//! probe AUC), clean-baseline/teacher quality, and the ERM-vs-distilled
//! contrast on a fully correlated square shortcut.
//!
//! Usage: cargo run --release -p shortcut-lab --example calibrate [fast|full]

use std::time::Instant;

use ndarray::Array2;
use shortcut_lab::data::{
    build_splits_opts, ClassSignal, DatasetManifest, FoldSpec, ShortcutKind, ShortcutSpec,
    SplitCounts, SplitOptions, SplitPolicy,
};
use shortcut_lab::distill::{
    evaluate_model, stack_samples, train_student, train_teacher, DistillPlan, AugMethod,
    LayerCount, TeacherMode, TrainConfig,
};
use shortcut_lab::metrics::auc;
use shortcut_lab::model::finetune_probes;

fn manifest(shortcut: Option<ShortcutSpec>) -> DatasetManifest {
    DatasetManifest {
        seed: 2024,
        image_side: 32,
        n_per_class: SplitCounts {
            train: 400,
            val: 100,
            test: 150,
        },
        class_signal: ClassSignal::default(),
        shortcuts: shortcut.into_iter().collect(),
        split_policy: SplitPolicy::CorrelatedTrainBalancedEval,
        teacher_subset_fraction: 0.2,
        teacher_contamination: 0.0,
    }
}

fn square() -> ShortcutSpec {
    ShortcutSpec {
        name: "square".into(),
        kind: ShortcutKind::SquareConstant,
        amplitude: 1.0,
        square_side: Some(4),
        position: Some((1, 1)),
        target_class: 1,
        prevalence: 1.0,
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 120,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}

/// Ridge regression on raw pixels via the dual form, solved with
/// conjugate gradients; returns test AUC of the linear scores.
fn linear_probe_auc(
    train: &[shortcut_lab::Sample32],
    test: &[shortcut_lab::Sample32],
    ridge: f64,
) -> f64 {
    let n = train.len();
    let d = train[0].pixels.len();
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = vec![0.0f64; n];
    for (i, s) in train.iter().enumerate() {
        for (j, &v) in s.pixels.iter().enumerate() {
            x[[i, j]] = v as f64;
        }
        y[i] = if s.label == 1 { 1.0 } else { -1.0 };
    }
    // gram matrix G = X X^T + ridge I
    let g = x.dot(&x.t());
    let matvec = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = ridge * v[i];
            for j in 0..n {
                acc += g[[i, j]] * v[j];
            }
            out[i] = acc;
        }
        out
    };
    // conjugate gradient for (G + ridge I) alpha = y
    let mut alpha = vec![0.0f64; n];
    let mut r = y.clone();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..500 {
        let ap = matvec(&p);
        let denom: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let step = rs / denom;
        for i in 0..n {
            alpha[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if rs_new.sqrt() < 1e-10 {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    // w = X^T alpha; score test points
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for s in test {
        let mut z = 0.0;
        for (i, tr) in train.iter().enumerate() {
            if alpha[i].abs() < 1e-14 {
                continue;
            }
            let mut dot = 0.0;
            for (a, b) in s.pixels.iter().zip(tr.pixels.iter()) {
                dot += (*a as f64) * (*b as f64);
            }
            z += alpha[i] * dot;
        }
        scores.push(z);
        labels.push(s.label);
    }
    auc(&scores, &labels).unwrap()
}

fn erm_scan() {
    let opts = SplitOptions {
        clean_student_train: false,
        fold: Some(FoldSpec { k: 5, index: 0 }),
    };
    let batch: usize = std::env::args()
        .nth(2)
        .and_then(|v| v.parse().ok())
        .unwrap_or(32);
    for amp in [0.80, 0.90, 1.00] {
        let mut sq = square();
        sq.amplitude = amp;
        let m = manifest(Some(sq));
        let biased = build_splits_opts::<f32>(&m, opts).unwrap();
        let plan = DistillPlan {
            lambda_kd: 0.0,
            ..DistillPlan::default()
        };
        let mut cfg = train_config(13);
        cfg.batch_size = batch;
        let erm = train_student(&biased, "small_cnn_5", None, &plan, AugMethod::None, &cfg).unwrap();
        let (imgs, lbls) = stack_samples(&biased.student_train);
        let model = erm.model;
        let mut probes = erm.probes;
        finetune_probes(&model, &mut probes, &imgs, &lbls, 0.1, 1000).unwrap();
        let rep = evaluate_model(&model, &probes, &biased.test, &m.shortcuts, "erm", 0).unwrap();
        let val_best = erm.history[erm.best_epoch - 1].val_ce;
        println!(
            "amp {amp:.2}: ERM dTPR {:.3} (al {:.3}/con {:.3}) AUC {:.3} best {}/{} valCE {:.3}",
            rep.delta_tpr,
            rep.tpr_aligned,
            rep.tpr_contrasting,
            rep.auc,
            erm.best_epoch,
            erm.final_epoch,
            val_best
        );
        let vals: Vec<String> = erm.history.iter().map(|h| format!("{:.3}", h.val_ce)).collect();
        println!("   val trajectory: {}", vals.join(" "));
    }
}

fn race_scan() {
    let opts = SplitOptions {
        clean_student_train: false,
        fold: Some(FoldSpec { k: 5, index: 0 }),
    };
    for fold in 0usize..5 {
        let batch = 32usize;
        let sq = square();
        let m = manifest(Some(sq));
        let opts = SplitOptions {
            clean_student_train: false,
            fold: Some(FoldSpec { k: 5, index: fold }),
        };
        let biased = build_splits_opts::<f32>(&m, opts).unwrap();
        let mut tcfg = train_config(7 + fold as u64);
        tcfg.batch_size = batch;
        let teacher = train_teacher(&biased, "small_cnn_5", &tcfg).unwrap();
        let (imgs, lbls) = stack_samples(&biased.student_train);
        let mut out = vec![format!("fold {fold}:")];
        for (tag, lam_kd) in [("erm", 0.0), ("ours", 1.0)] {
            let plan = DistillPlan {
                lambda_kd: lam_kd,
                teacher_mode: TeacherMode::Specialist,
                n_sampled_layers: LayerCount::All,
                ..DistillPlan::default()
            };
            let teach = if lam_kd > 0.0 {
                Some((&teacher.model, teacher.probes.as_slice()))
            } else {
                None
            };
            let mut scfg = train_config(13 + fold as u64);
            scfg.batch_size = batch;
            let trained =
                train_student(&biased, "small_cnn_5", teach, &plan, AugMethod::None, &scfg)
                    .unwrap();
            let model = trained.model;
            let mut probes = trained.probes;
            finetune_probes(&model, &mut probes, &imgs, &lbls, 0.1, 1000).unwrap();
            let rep = evaluate_model(&model, &probes, &biased.test, &m.shortcuts, tag, 0).unwrap();
            out.push(format!(
                "{tag} dTPR {:.3} AUC {:.3} best {}/{}",
                rep.delta_tpr, rep.auc, trained.best_epoch, trained.final_epoch
            ));
        }
        println!("{}", out.join("  "));
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "fast".into());
    if mode == "scan" {
        erm_scan();
        return;
    }
    if mode == "race" {
        race_scan();
        return;
    }

    // 1. signal difficulty
    let m_clean = manifest(None);
    let opts = SplitOptions {
        clean_student_train: false,
        fold: Some(FoldSpec { k: 5, index: 0 }),
    };
    let t0 = Instant::now();
    let clean = build_splits_opts::<f32>(&m_clean, opts).unwrap();
    println!(
        "dataset: {} teacher / {} student / {} val / {} test  ({:.1}s)",
        clean.teacher_train.len(),
        clean.student_train.len(),
        clean.val.len(),
        clean.test.len(),
        t0.elapsed().as_secs_f32()
    );
    let t0 = Instant::now();
    let all_train: Vec<_> = clean
        .teacher_train
        .iter()
        .chain(&clean.student_train)
        .cloned()
        .collect();
    let lin = linear_probe_auc(&all_train, &clean.test, 1.0);
    println!("linear probe on raw pixels: test AUC = {lin:.3}  ({:.1}s)", t0.elapsed().as_secs_f32());

    // 2. clean baseline CNN (trained on student-sized clean data)
    let t0 = Instant::now();
    let baseline_cfg = train_config(11);
    let baseline = {
        let plan = DistillPlan {
            lambda_kd: 0.0,
            ..DistillPlan::default()
        };
        train_student(&clean, "small_cnn_5", None, &plan, AugMethod::None, &baseline_cfg).unwrap()
    };
    let (imgs, lbls) = stack_samples(&clean.student_train);
    let bl_model = baseline.model;
    let mut bl_probes = baseline.probes;
    finetune_probes(&bl_model, &mut bl_probes, &imgs, &lbls, 0.1, 1000).unwrap();
    let bl_report = evaluate_model(&bl_model, &bl_probes, &clean.test, &[], "baseline", 0).unwrap();
    println!(
        "clean baseline: test AUC = {:.3}, best epoch {}/{} ({:.1}s)",
        bl_report.auc,
        baseline.best_epoch,
        baseline.final_epoch,
        t0.elapsed().as_secs_f32()
    );
    let _ = &bl_model;

    if mode == "lin" {
        return;
    }

    // 3. biased dataset: square at 100% prevalence
    let m_biased = manifest(Some(square()));
    let biased = build_splits_opts::<f32>(&m_biased, opts).unwrap();

    // teacher on the 20% clean subset
    let t0 = Instant::now();
    let teacher_cfg = train_config(7);
    let teacher = train_teacher(&biased, "small_cnn_5", &teacher_cfg).unwrap();
    let teacher_report =
        evaluate_model(&teacher.model, &teacher.probes, &biased.test, &m_biased.shortcuts, "teacher", 0)
            .unwrap();
    println!(
        "teacher (n={}): val-best epoch {}/{}, test AUC = {:.3}, dTPR = {:.3} ({:.1}s)",
        biased.teacher_train.len(),
        teacher.best_epoch,
        teacher.final_epoch,
        teacher_report.auc,
        teacher_report.delta_tpr,
        t0.elapsed().as_secs_f32()
    );

    // ERM on the biased student split
    let t0 = Instant::now();
    let erm_cfg = train_config(13);
    let erm = {
        let plan = DistillPlan {
            lambda_kd: 0.0,
            ..DistillPlan::default()
        };
        train_student(&biased, "small_cnn_5", None, &plan, AugMethod::None, &erm_cfg).unwrap()
    };
    let (imgs, lbls) = stack_samples(&biased.student_train);
    let erm_model = erm.model;
    let mut erm_probes = erm.probes;
    finetune_probes(&erm_model, &mut erm_probes, &imgs, &lbls, 0.1, 200).unwrap();
    let erm_report =
        evaluate_model(&erm_model, &erm_probes, &biased.test, &m_biased.shortcuts, "erm", 0).unwrap();
    println!(
        "ERM on biased: test AUC = {:.3}, dTPR = {:.3} (aligned {:.3} / contrasting {:.3}), best {}/{} ({:.1}s)",
        erm_report.auc,
        erm_report.delta_tpr,
        erm_report.tpr_aligned,
        erm_report.tpr_contrasting,
        erm.best_epoch,
        erm.final_epoch,
        t0.elapsed().as_secs_f32()
    );

    if mode == "fast" {
        println!("(fast mode: skipping the distilled student; run with `full`)");
        return;
    }

    // Ours: intermediate-layer distillation from the specialist teacher
    let t0 = Instant::now();
    let mut ours_cfg = train_config(13);
    ours_cfg.early_stop_patience = 60;
    ours_cfg.max_epochs = 300;
    let kd_only = std::env::args().nth(2).map(|v| v == "kdonly").unwrap_or(false);
    let plan = DistillPlan {
        teacher_mode: TeacherMode::Specialist,
        n_sampled_layers: LayerCount::All,
        lambda_ce: if kd_only { 0.0 } else { 1.0 },
        ..DistillPlan::default()
    };
    let ours = train_student(
        &biased,
        "small_cnn_5",
        Some((&teacher.model, &teacher.probes)),
        &plan,
        AugMethod::None,
        &ours_cfg,
    )
    .unwrap();
    let ours_model = ours.model;
    let mut ours_probes = ours.probes;
    finetune_probes(&ours_model, &mut ours_probes, &imgs, &lbls, 0.1, 1000).unwrap();
    let ours_report =
        evaluate_model(&ours_model, &ours_probes, &biased.test, &m_biased.shortcuts, "ours", 0)
            .unwrap();
    println!(
        "Ours on biased: test AUC = {:.3}, dTPR = {:.3} (aligned {:.3} / contrasting {:.3}), best {}/{} ({:.1}s)",
        ours_report.auc,
        ours_report.delta_tpr,
        ours_report.tpr_aligned,
        ours_report.tpr_contrasting,
        ours.best_epoch,
        ours.final_epoch,
        t0.elapsed().as_secs_f32()
    );
    println!(
        "contrast: ERM dTPR {:.3} vs Ours {:.3}; baseline AUC {:.3}, ERM {:.3}, Ours {:.3}",
        erm_report.delta_tpr, ours_report.delta_tpr, bl_report.auc, erm_report.auc, ours_report.auc
    );
    println!("teacher per-layer (conf, auc) on test:");
    for p in &teacher_report.per_layer {
        println!("  tap {}: conf {:.3}, auc {:.3}", p.tap_index, p.confidence, p.auc);
    }
    println!("ours per-layer (conf, auc) on test:");
    for p in &ours_report.per_layer {
        println!("  tap {}: conf {:.3}, auc {:.3}", p.tap_index, p.confidence, p.auc);
    }
    println!("ours history (epoch, ce, kd, val_ce):");
    for h in &ours.history {
        println!("  {} {:.3} {:.3} {:.3}", h.epoch, h.train_ce, h.train_kd, h.val_ce);
    }
}

//! Loss algebra: sample-level KL divergence between 2-class probe
//! distributions, the weighted per-layer distillation sum, and the total
//! training objective.

use ndarray::Array2;

use super::DistillPlan;
use crate::error::{Error, Result};
use crate::num::{clamp_prob, Scalar};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

fn check_dist<F: Scalar>(name: &str, d: [F; 2]) -> Result<()> {
    let sum = d[0] + d[1];
    if d[0] < F::zero() || d[1] < F::zero() || (sum - F::one()).abs() > F::f(1e-6) {
        return Err(Error::invalid(
            name,
            format!("not a distribution: ({}, {})", d[0], d[1]),
        ));
    }
    Ok(())
}

/// `D_KL(p || q)` between two 2-class distributions, with `0 ln 0 = 0`.
pub fn kl_divergence<F: Scalar>(p: [F; 2], q: [F; 2]) -> Result<F> {
    check_dist("p", p)?;
    check_dist("q", q)?;
    let eps = F::f(PROB_EPS);
    let mut acc = F::zero();
    for k in 0..2 {
        if p[k] > F::zero() {
            let pk = clamp_prob(p[k], eps);
            let qk = clamp_prob(q[k], eps);
            acc = acc + p[k] * (pk.ln() - qk.ln());
        }
    }
    Ok(acc)
}

/// Mean row-wise KL between two `(batch, 2)` distribution stacks.
fn batch_kl<F: Scalar>(p: &Array2<F>, q: &Array2<F>) -> Result<F> {
    if p.dim() != q.dim() || p.ncols() != 2 {
        return Err(Error::shape(
            "batch_kl",
            format!("{:?} vs {:?}", p.dim(), q.dim()),
        ));
    }
    if p.nrows() == 0 {
        return Err(Error::EmptyInput("batch_kl".into()));
    }
    let mut total = F::zero();
    for (rp, rq) in p.rows().into_iter().zip(q.rows()) {
        total = total + kl_divergence([rp[0], rp[1]], [rq[0], rq[1]])?;
    }
    Ok(total / F::f(p.nrows() as f64))
}

/// Knowledge-distillation loss: the alpha-weighted sum over the paired
/// layers of the batch-mean KL between teacher and student distributions,
/// in the soft-target convention `D_KL(teacher || student)` whose
/// student-logit gradient is `sigmoid(z) - q`. The mode-seeking reverse
/// orientation has a gradient damped by `sigmoid'(z)`, which vanishes
/// exactly where a probe is confidently shortcut-reliant and stalls the
/// mitigation.
///
/// `student_dists[i]` / `teacher_dists[i]` are the `(batch, 2)` outputs of
/// the i-th pair, ordered as in `plan.pairs`, with the final-head pair
/// appended when `plan.include_final_head`.
pub fn kd_loss<F: Scalar>(
    student_dists: &[Array2<F>],
    teacher_dists: &[Array2<F>],
    plan: &DistillPlan,
) -> Result<F> {
    let expected = plan.pairs.len() + usize::from(plan.include_final_head);
    if student_dists.len() != expected || teacher_dists.len() != expected {
        return Err(Error::shape(
            "kd_loss",
            format!(
                "expected {} pair outputs, got {} student / {} teacher",
                expected,
                student_dists.len(),
                teacher_dists.len()
            ),
        ));
    }
    let alpha = F::f(plan.alpha);
    let mut total = F::zero();
    for (s, t) in student_dists.iter().zip(teacher_dists) {
        total = total + alpha * batch_kl(t, s)?;
    }
    Ok(total)
}

/// Total objective: `lambda_ce * ce + lambda_kd * kd`.
pub fn total_loss<F: Scalar>(ce: F, kd: F, plan: &DistillPlan) -> Result<F> {
    if !ce.is_finite() || !kd.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            detail: format!("non-finite loss inputs: ce={ce}, kd={kd}"),
        });
    }
    Ok(F::f(plan.lambda_ce) * ce + F::f(plan.lambda_kd) * kd)
}

/// Confidence regularization: mean KL from each tap's distribution to the
/// uniform distribution, summed over taps.
pub fn uniform_reg_loss<F: Scalar>(student_dists: &[Array2<F>]) -> Result<F> {
    if student_dists.is_empty() {
        return Err(Error::EmptyInput("uniform_reg_loss".into()));
    }
    let mut total = F::zero();
    for s in student_dists {
        let uniform = Array2::from_elem(s.dim(), F::half());
        total = total + batch_kl(s, &uniform)?;
    }
    Ok(total)
}

/// Loss values and analytic gradients of the student objective for one
/// batch, taken w.r.t. the student logits.
pub struct ObjectiveGrad<F> {
    pub total: F,
    pub ce: F,
    pub kd: F,
    /// d total / d final_logits
    pub d_final: Array1<F>,
    /// d total / d tap_logits, per pair
    pub d_taps: Vec<Array1<F>>,
}

use ndarray::Array1;

use crate::num::sigmoid;

/// Numerically stable binary cross-entropy from logits with soft targets:
/// `max(z, 0) - z y + ln(1 + exp(-|z|))`, batch mean.
pub fn bce_with_logits<F: Scalar>(logits: &Array1<F>, targets: &Array1<F>) -> Result<(F, Array1<F>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::shape(
            "bce_with_logits",
            format!("{} logits vs {} targets", logits.len(), targets.len()),
        ));
    }
    let n = F::f(logits.len() as f64);
    let mut loss = F::zero();
    let mut grad = Array1::zeros(logits.len());
    for (i, (&z, &y)) in logits.iter().zip(targets).enumerate() {
        loss = loss + z.max(F::zero()) - z * y + (F::one() + (-z.abs()).exp()).ln();
        grad[i] = (sigmoid(z) - y) / n;
    }
    Ok((loss / n, grad))
}

/// `d/dz` of `D_KL(q || (1-sigmoid(z), sigmoid(z)))`: the soft-target
/// cross-entropy gradient `sigmoid(z) - q1`.
fn kl_grad_wrt_logit<F: Scalar>(z: F, q: [F; 2]) -> F {
    sigmoid(z) - q[1]
}

/// The full student objective for one batch, with analytic gradients
/// w.r.t. every student logit (final head and each paired tap probe).
///
/// `tap_logits[i]` are the student probe logits for pair `i`, aligned
/// with `teacher_tap_dists[i]`; `teacher_final_dist` supplies the
/// final-head target when that pair is active.
pub fn objective_with_grad<F: Scalar>(
    final_logits: &Array1<F>,
    targets: &Array1<F>,
    tap_logits: &[Array1<F>],
    teacher_tap_dists: &[Array2<F>],
    teacher_final_dist: Option<&Array2<F>>,
    plan: &DistillPlan,
) -> Result<ObjectiveGrad<F>> {
    if tap_logits.len() != teacher_tap_dists.len() {
        return Err(Error::shape(
            "objective_with_grad",
            format!(
                "{} tap logit vectors vs {} teacher targets",
                tap_logits.len(),
                teacher_tap_dists.len()
            ),
        ));
    }
    let n = F::f(final_logits.len() as f64);
    let lambda_ce = F::f(plan.lambda_ce);
    let lambda_kd = F::f(plan.lambda_kd);
    let alpha = F::f(plan.alpha);

    let (ce, ce_grad) = bce_with_logits(final_logits, targets)?;
    let mut d_final = ce_grad.mapv(|g| g * lambda_ce);

    let mut kd = F::zero();
    let mut d_taps = Vec::with_capacity(tap_logits.len());
    for (z_vec, q) in tap_logits.iter().zip(teacher_tap_dists) {
        if z_vec.len() != q.nrows() {
            return Err(Error::shape(
                "objective_with_grad",
                format!("{} logits vs {} teacher rows", z_vec.len(), q.nrows()),
            ));
        }
        let mut pair_loss = F::zero();
        let mut dz = Array1::zeros(z_vec.len());
        for (i, &z) in z_vec.iter().enumerate() {
            let f = sigmoid(z);
            let target = [q[[i, 0]], q[[i, 1]]];
            pair_loss = pair_loss + kl_divergence(target, [F::one() - f, f])?;
            dz[i] = lambda_kd * alpha * kl_grad_wrt_logit(z, target) / n;
        }
        kd = kd + alpha * pair_loss / n;
        d_taps.push(dz);
    }
    if let Some(qf) = teacher_final_dist {
        let mut pair_loss = F::zero();
        for (i, &z) in final_logits.iter().enumerate() {
            let f = sigmoid(z);
            let target = [qf[[i, 0]], qf[[i, 1]]];
            pair_loss = pair_loss + kl_divergence(target, [F::one() - f, f])?;
            d_final[i] = d_final[i] + lambda_kd * alpha * kl_grad_wrt_logit(z, target) / n;
        }
        kd = kd + alpha * pair_loss / n;
    }

    let total = total_loss(ce, kd, plan)?;
    Ok(ObjectiveGrad {
        total,
        ce,
        kd,
        d_final,
        d_taps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(f: f64) -> [f64; 2] {
        [1.0 - f, f]
    }

    #[test]
    fn kl_identity_is_zero() {
        assert_abs_diff_eq!(kl_divergence([0.3, 0.7], [0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn kl_hard_versus_uniform_is_ln2() {
        let v = kl_divergence([1.0, 0.0], [0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-6);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let p = dist(rng.random_range(0.0..=1.0));
            let q = dist(rng.random_range(0.0..=1.0));
            let v = kl_divergence(p, q).unwrap();
            assert!(v >= -1e-12, "D_KL({p:?}||{q:?}) = {v}");
        }
    }

    #[test]
    fn kl_rejects_non_distribution() {
        assert!(kl_divergence([0.5, 0.6], [0.5, 0.5]).is_err());
        assert!(kl_divergence([-0.1, 1.1], [0.5, 0.5]).is_err());
    }

    #[test]
    fn kd_zero_when_identical() {
        let plan = DistillPlan {
            pairs: vec![(0, 0), (1, 1)],
            include_final_head: false,
            ..DistillPlan::default()
        };
        let d = array![[0.2, 0.8], [0.6, 0.4]];
        let out = kd_loss(&[d.clone(), d.clone()], &[d.clone(), d], &plan).unwrap();
        assert_abs_diff_eq!(out, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kd_adds_pairs() {
        // a maximally uncertain student against a hard teacher target
        // contributes exactly ln 2 per pair
        let plan = DistillPlan {
            pairs: vec![(0, 0), (1, 1)],
            include_final_head: false,
            ..DistillPlan::default()
        };
        let hard = array![[1.0, 0.0]];
        let uniform = array![[0.5, 0.5]];
        let out = kd_loss(
            &[uniform.clone(), uniform],
            &[hard.clone(), hard],
            &plan,
        )
        .unwrap();
        assert_abs_diff_eq!(out, 2.0 * std::f64::consts::LN_2, epsilon = 1e-6);
    }

    #[test]
    fn kd_linear_in_alpha() {
        let plan = DistillPlan {
            pairs: vec![(0, 0)],
            include_final_head: false,
            ..DistillPlan::default()
        };
        let doubled = DistillPlan {
            alpha: 2.0,
            ..plan.clone()
        };
        let s = array![[0.9, 0.1], [0.3, 0.7]];
        let t = array![[0.5, 0.5], [0.5, 0.5]];
        let a = kd_loss(&[s.clone()], &[t.clone()], &plan).unwrap();
        let b = kd_loss(&[s], &[t], &doubled).unwrap();
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn kd_length_mismatch_errors() {
        let plan = DistillPlan {
            pairs: vec![(0, 0), (2, 2)],
            include_final_head: false,
            ..DistillPlan::default()
        };
        let d = array![[0.2, 0.8]];
        assert!(kd_loss(&[d.clone()], &[d], &plan).is_err());
    }

    #[test]
    fn total_is_weighted_sum() {
        let plan = DistillPlan::default();
        assert_abs_diff_eq!(total_loss(0.4, 0.2, &plan).unwrap(), 0.6, epsilon = 1e-12);
        let erm = DistillPlan {
            lambda_kd: 0.0,
            ..DistillPlan::default()
        };
        assert_abs_diff_eq!(total_loss(0.37, 9.9, &erm).unwrap(), 0.37, epsilon = 1e-12);
        let no_ce = DistillPlan {
            lambda_ce: 0.0,
            ..DistillPlan::default()
        };
        assert_abs_diff_eq!(total_loss(0.37, 0.0, &no_ce).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn total_rejects_nan() {
        let plan = DistillPlan::default();
        assert!(total_loss(f64::NAN, 0.0, &plan).is_err());
        assert!(total_loss(0.0, f64::INFINITY, &plan).is_err());
    }

    #[test]
    fn uniform_reg_zero_at_uniform() {
        let d = array![[0.5, 0.5], [0.5, 0.5]];
        assert_abs_diff_eq!(uniform_reg_loss(&[d]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_reg_hard_tap_is_ln2() {
        let d = array![[1.0, 0.0]];
        assert_abs_diff_eq!(
            uniform_reg_loss(&[d]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-6
        );
    }

    #[test]
    fn objective_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.random_range(2..6);
            let plan = DistillPlan {
                pairs: vec![(0, 0), (1, 1)],
                alpha: rng.random_range(0.5..2.0),
                lambda_ce: rng.random_range(0.2..2.0),
                lambda_kd: rng.random_range(0.2..2.0),
                include_final_head: true,
                ..DistillPlan::default()
            };
            let final_logits: ndarray::Array1<f64> =
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let targets: ndarray::Array1<f64> =
                (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
            let tap_logits: Vec<ndarray::Array1<f64>> = (0..2)
                .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let teacher_taps: Vec<Array2<f64>> = (0..2)
                .map(|_| {
                    let mut q = Array2::zeros((n, 2));
                    for i in 0..n {
                        let g: f64 = rng.random_range(0.05..0.95);
                        q[[i, 0]] = 1.0 - g;
                        q[[i, 1]] = g;
                    }
                    q
                })
                .collect();
            let teacher_final = {
                let mut q = Array2::zeros((n, 2));
                for i in 0..n {
                    let g: f64 = rng.random_range(0.05..0.95);
                    q[[i, 0]] = 1.0 - g;
                    q[[i, 1]] = g;
                }
                q
            };

            let eval = |fl: &ndarray::Array1<f64>, tl: &[ndarray::Array1<f64>]| -> f64 {
                objective_with_grad(fl, &targets, tl, &teacher_taps, Some(&teacher_final), &plan)
                    .unwrap()
                    .total
            };
            let g = objective_with_grad(
                &final_logits,
                &targets,
                &tap_logits,
                &teacher_taps,
                Some(&teacher_final),
                &plan,
            )
            .unwrap();

            let h = 1e-6;
            for i in 0..n {
                let mut plus = final_logits.clone();
                plus[i] += h;
                let mut minus = final_logits.clone();
                minus[i] -= h;
                let fd = (eval(&plus, &tap_logits) - eval(&minus, &tap_logits)) / (2.0 * h);
                let rel = (g.d_final[i] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "final[{i}]: analytic {} vs fd {fd}", g.d_final[i]);
            }
            for p in 0..2 {
                for i in 0..n {
                    let mut tl = tap_logits.clone();
                    tl[p][i] += h;
                    let up = eval(&final_logits, &tl);
                    tl[p][i] -= 2.0 * h;
                    let down = eval(&final_logits, &tl);
                    let fd = (up - down) / (2.0 * h);
                    let rel = (g.d_taps[p][i] - fd).abs() / fd.abs().max(1e-8);
                    assert!(rel < 1e-4, "tap[{p}][{i}]: analytic {} vs fd {fd}", g.d_taps[p][i]);
                }
            }
        }
    }

    #[test]
    fn uniform_reg_monotone_along_interpolation() {
        // moving any tap toward uniform never increases the loss
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let f = rng.random_range(0.0..=1.0);
            let steps: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
            let mut last = f64::INFINITY;
            for s in steps {
                // s = 1 is fully uniform
                let fi = f + s * (0.5 - f);
                let d = array![[1.0 - fi, fi]];
                let v = uniform_reg_loss(&[d]).unwrap();
                assert!(v <= last + 1e-9, "f={f}, s={s}: {v} > {last}");
                last = v;
            }
        }
    }
}

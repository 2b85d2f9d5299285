// SPDX-License-Identifier: Apache-2.0

//! Distillation restricted to parts of the label space.
//!
//! The student distribution always drops the target label. The teacher
//! distribution drops the client's mask set (its majority labels for LMD,
//! nothing for NTD) and, so that the divergence stays finite, the target
//! label as well.

use super::{check_logits, combine, cross_entropy, log_sum_exp, LossOutput, TeacherContext};
use crate::error::{Error, Result};
use crate::labels::{Label, LabelSet};
use crate::nn::{masked_softmax_row, softmax_with_temperature, Tensor};

/// Teacher distribution at temperature `tau` with `mask` zeroed out.
pub fn masked_teacher_dist(teacher: &Tensor<f64>, mask: &LabelSet, tau: f64) -> Result<Tensor<f64>> {
    softmax_with_temperature(teacher, tau, Some(mask))
}

/// Student distribution at temperature `tau` with each row's target zeroed out.
pub fn masked_student_dist(student: &Tensor<f64>, targets: &[Label], tau: f64) -> Result<Tensor<f64>> {
    let (n, c) = check_logits(student, Some(targets))?;
    let mut out = Tensor::zeros(vec![n, c]);
    let mut mask = vec![false; c];
    for (r, (dst, &y)) in out.data_mut().chunks_exact_mut(c).zip(targets).enumerate() {
        mask[y.index()] = true;
        masked_softmax_row(student.row(r), tau, Some(&mask), dst)?;
        mask[y.index()] = false;
    }
    Ok(out)
}

/// `1 / (C - C_k)` on minority labels, 0 on the majority set.
pub fn fixed_minority_vector(majority: &LabelSet) -> Result<Vec<f64>> {
    let minority = majority.classes() - majority.len();
    if minority == 0 {
        return Err(Error::DegenerateClient);
    }
    let share = 1.0 / minority as f64;
    Ok(majority
        .as_mask()
        .iter()
        .map(|&m| if m { 0.0 } else { share })
        .collect())
}

/// `KL(t || s')` for one row, `s'` the target-masked student softmax.
/// Writes `(s'_j - t_j) / tau` into `grad` (0 at the target). A teacher row
/// that is all zero contributes nothing.
fn masked_kl_row(z: &[f64], y: usize, teacher: &[f64], tau: f64, grad: &mut [f64]) -> Result<f64> {
    if teacher[y] != 0.0 {
        return Err(Error::Internal(format!(
            "teacher puts mass {} on the masked target label",
            teacher[y]
        )));
    }
    if teacher.iter().all(|&t| t == 0.0) {
        grad.fill(0.0);
        return Ok(0.0);
    }
    let lse = log_sum_exp(z, tau, |i| i != y);
    let mut kl = 0.0;
    for i in 0..z.len() {
        if i == y {
            grad[i] = 0.0;
            continue;
        }
        let log_s = z[i] / tau - lse;
        let t = teacher[i];
        if t > 0.0 {
            kl += t * (t.ln() - log_s);
        }
        grad[i] = (log_s.exp() - t) / tau;
    }
    Ok(kl)
}

/// Batch-mean masked KL with a per-row teacher distribution produced by
/// `teacher_row(row, target, out)`.
fn masked_distill(
    student: &Tensor<f64>,
    targets: &[Label],
    tau: f64,
    mut teacher_row: impl FnMut(usize, usize, &mut [f64]) -> Result<()>,
) -> Result<LossOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let (n, c) = check_logits(student, Some(targets))?;
    let mut grad = Tensor::zeros(vec![n, c]);
    let mut t = vec![0.0; c];
    let mut total = 0.0;
    for (r, (g, &y)) in grad.data_mut().chunks_exact_mut(c).zip(targets).enumerate() {
        teacher_row(r, y.index(), &mut t)?;
        total += masked_kl_row(student.row(r), y.index(), &t, tau, g)?;
        for gi in g.iter_mut() {
            *gi /= n as f64;
        }
    }
    Ok(LossOutput {
        value: total / n as f64,
        grad,
    })
}

/// `CE + beta * KL(p'_g || p'_k)`.
///
/// With a global-model teacher, `p'_g` masks `mask ∪ {y}`; with a fixed
/// vector, the vector's entry at `y` (if any) is dropped and the rest
/// renormalized. Rows whose teacher support is empty add no distillation.
pub fn lmd_loss(
    student: &Tensor<f64>,
    teacher: TeacherContext<'_>,
    targets: &[Label],
    mask: &LabelSet,
    beta: f64,
    tau: f64,
) -> Result<LossOutput> {
    let (n, c) = check_logits(student, Some(targets))?;
    if mask.classes() != c {
        return Err(Error::InvalidMask(format!(
            "mask over {} classes for {c}-class logits",
            mask.classes()
        )));
    }
    let ce = cross_entropy(student, targets)?;
    let kl = match teacher {
        TeacherContext::GlobalModel(zg) => {
            if zg.shape() != [n, c] {
                return Err(Error::Shape(format!(
                    "teacher logits {:?} vs student [{n}, {c}]",
                    zg.shape()
                )));
            }
            let mut row_mask = mask.as_mask().to_vec();
            masked_distill(student, targets, tau, |r, y, out| {
                let was = row_mask[y];
                row_mask[y] = true;
                let res = if row_mask.iter().all(|&m| m) {
                    out.fill(0.0);
                    Ok(())
                } else {
                    masked_softmax_row(zg.row(r), tau, Some(&row_mask), out)
                };
                row_mask[y] = was;
                res
            })?
        }
        TeacherContext::FixedVector(mu) => {
            if mu.len() != c {
                return Err(Error::Shape(format!(
                    "fixed teacher has {} entries for {c} classes",
                    mu.len()
                )));
            }
            if mask.iter().any(|l| mu[l.index()] != 0.0) {
                return Err(Error::Internal("fixed teacher puts mass on a masked label".into()));
            }
            masked_distill(student, targets, tau, |_, y, out| {
                out.copy_from_slice(mu);
                if mu[y] != 0.0 {
                    let rest = 1.0 - mu[y];
                    out[y] = 0.0;
                    if rest > 0.0 {
                        out.iter_mut().for_each(|v| *v /= rest);
                    } else {
                        out.fill(0.0);
                    }
                }
                Ok(())
            })?
        }
        TeacherContext::None => return Err(Error::Internal("label-masking distillation needs a teacher".into())),
    };
    Ok(combine(ce, kl, beta))
}

/// Not-true distillation: LMD with an empty mask set.
pub fn ntd_loss(
    student: &Tensor<f64>,
    teacher: &Tensor<f64>,
    targets: &[Label],
    tau: f64,
    beta: f64,
) -> Result<LossOutput> {
    let (_, c) = check_logits(student, None)?;
    lmd_loss(
        student,
        TeacherContext::GlobalModel(teacher),
        targets,
        &LabelSet::empty(c),
        beta,
        tau,
    )
}

/// Teacher-free NTD: the teacher is uniform over the `C - 1` non-target labels.
pub fn ntd_tf_loss(student: &Tensor<f64>, targets: &[Label], tau: f64, beta: f64) -> Result<LossOutput> {
    let (_, c) = check_logits(student, Some(targets))?;
    let ce = cross_entropy(student, targets)?;
    let share = 1.0 / (c - 1) as f64;
    let kl = masked_distill(student, targets, tau, |_, y, out| {
        out.fill(share);
        out[y] = 0.0;
        Ok(())
    })?;
    Ok(combine(ce, kl, beta))
}

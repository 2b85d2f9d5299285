// SPDX-License-Identifier: Apache-2.0

//! Client training objectives.
//!
//! Every loss takes `batch x C` logits in `f64` and returns the batch-mean
//! value together with its gradient with respect to the student logits.
//! Teacher quantities are constants. Distillation terms carry no `tau^2`
//! factor.

mod basic;
mod masked;
mod prox;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use basic::{cross_entropy, kd_loss, label_smoothing_loss};
pub use masked::{fixed_minority_vector, lmd_loss, masked_student_dist, masked_teacher_dist, ntd_loss, ntd_tf_loss};
pub use prox::prox_term;

use crate::error::{Error, Result};
use crate::labels::{Label, LabelSet};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d value / d student logits, `batch x C`.
    pub grad: Tensor<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Plain cross-entropy (FedAvg).
    Ce,
    /// Cross-entropy plus full-distribution distillation.
    CeKd,
    /// Not-true distillation: teacher and student both drop the target.
    Ntd,
    /// Label-masking distillation.
    Lmd,
    /// Label-masking distillation against the fixed minority vector.
    LmdTf,
    /// NTD against a uniform off-target teacher.
    NtdTf,
    /// Cross-entropy with label smoothing.
    CeLs,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Ce,
        LossKind::CeKd,
        LossKind::Ntd,
        LossKind::Lmd,
        LossKind::LmdTf,
        LossKind::NtdTf,
        LossKind::CeLs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::CeKd => "kd",
            LossKind::Ntd => "ntd",
            LossKind::Lmd => "lmd",
            LossKind::LmdTf => "lmd-tf",
            LossKind::NtdTf => "ntd-tf",
            LossKind::CeLs => "ls",
        }
    }

    /// Whether the loss distills from the broadcast global model.
    pub fn needs_teacher_model(self) -> bool {
        matches!(self, LossKind::CeKd | LossKind::Ntd | LossKind::Lmd)
    }

    /// Whether the loss depends on the client's majority set.
    pub fn uses_majority(self) -> bool {
        matches!(self, LossKind::Lmd | LossKind::LmdTf)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown loss kind {s:?} (expected one of ce, kd, ntd, lmd, lmd-tf, ntd-tf, ls)"
            ))
        })
    }
}

/// Which loss a run trains with, and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Distillation weight.
    pub beta: f64,
    /// Distillation temperature.
    pub tau: f64,
    /// Label-smoothing mass for [`LossKind::CeLs`].
    pub smoothing: f64,
    /// Proximal coefficient; 0 disables the term.
    pub prox_mu: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::Ce,
            beta: 1.0,
            tau: 1.0,
            smoothing: 0.1,
            prox_mu: 0.0,
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            ..Default::default()
        }
    }

    /// Every violated constraint, as `loss.<field>: message`.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            out.push(format!("loss.beta: must be non-negative, got {}", self.beta));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            out.push(format!("loss.tau: must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            out.push(format!("loss.smoothing: must be in [0, 1), got {}", self.smoothing));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            out.push(format!("loss.prox_mu: must be non-negative, got {}", self.prox_mu));
        }
        out
    }

    /// Evaluates the configured loss on one batch.
    ///
    /// `majority` is the client's mask set, required by the LMD family.
    /// Teacher-free kinds ignore `teacher`; LMD-Tf derives its fixed vector
    /// from `majority`.
    pub fn evaluate(
        &self,
        student: &Tensor<f64>,
        teacher: TeacherContext<'_>,
        targets: &[Label],
        majority: Option<&LabelSet>,
    ) -> Result<LossOutput> {
        let need_majority =
            || majority.ok_or_else(|| Error::Internal(format!("{} needs the client's majority set", self.kind)));
        let need_logits = || match teacher {
            TeacherContext::GlobalModel(z) => Ok(z),
            _ => Err(Error::Internal(format!("{} needs teacher logits", self.kind))),
        };
        match self.kind {
            LossKind::Ce => cross_entropy(student, targets),
            LossKind::CeKd => {
                let ce = cross_entropy(student, targets)?;
                let kd = kd_loss(student, need_logits()?, self.tau)?;
                Ok(combine(ce, kd, self.beta))
            }
            LossKind::Ntd => ntd_loss(student, need_logits()?, targets, self.tau, self.beta),
            LossKind::Lmd => lmd_loss(student, teacher, targets, need_majority()?, self.beta, self.tau),
            LossKind::LmdTf => {
                let m = need_majority()?;
                let mu = fixed_minority_vector(m)?;
                lmd_loss(
                    student,
                    TeacherContext::FixedVector(&mu),
                    targets,
                    m,
                    self.beta,
                    self.tau,
                )
            }
            LossKind::NtdTf => ntd_tf_loss(student, targets, self.tau, self.beta),
            LossKind::CeLs => label_smoothing_loss(student, targets, self.smoothing),
        }
    }
}

/// Source of the distillation target.
#[derive(Debug, Clone, Copy)]
pub enum TeacherContext<'a> {
    /// Logits of the frozen global model on the same batch.
    GlobalModel(&'a Tensor<f64>),
    /// A fixed distribution over labels, shared by every example.
    FixedVector(&'a [f64]),
    None,
}

/// `a + beta * b`, value and gradient.
pub(crate) fn combine(mut a: LossOutput, b: LossOutput, beta: f64) -> LossOutput {
    a.value += beta * b.value;
    for (g, &h) in a.grad.data_mut().iter_mut().zip(b.grad.data()) {
        *g += beta * h;
    }
    a
}

pub(crate) fn check_logits(logits: &Tensor<f64>, targets: Option<&[Label]>) -> Result<(usize, usize)> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "expected batch x classes logits, got {:?}",
            logits.shape()
        )));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if c < 2 {
        return Err(Error::Shape("need at least two classes".into()));
    }
    if let Some(t) = targets {
        if t.len() != n {
            return Err(Error::Shape(format!("{} targets for {n} logit rows", t.len())));
        }
        if let Some(bad) = t.iter().find(|l| l.index() >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad.get() as usize,
                classes: c,
            });
        }
    }
    Ok((n, c))
}

/// `log sum exp(z / tau)` over entries with `keep[i]`.
pub(crate) fn log_sum_exp(z: &[f64], tau: f64, keep: impl Fn(usize) -> bool) -> f64 {
    let max = (0..z.len())
        .filter(|&i| keep(i))
        .map(|i| z[i] / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = (0..z.len())
        .filter(|&i| keep(i))
        .map(|i| (z[i] / tau - max).exp())
        .sum();
    max + sum.ln()
}

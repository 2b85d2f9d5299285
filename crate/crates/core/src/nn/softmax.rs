// SPDX-License-Identifier: Apache-2.0

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::labels::LabelSet;

/// Temperature softmax of one row restricted to labels outside `masked`.
///
/// Masked entries are exactly zero; the rest sum to one. The maximum is
/// taken over unmasked entries only.
pub fn masked_softmax_row(logits: &[f64], tau: f64, masked: Option<&[bool]>, out: &mut [f64]) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let keep = |i: usize| masked.is_none_or(|m| !m[i]);
    if let Some(m) = masked {
        if m.len() != logits.len() {
            return Err(Error::InvalidMask(format!(
                "mask has {} entries for {} classes",
                m.len(),
                logits.len()
            )));
        }
    }
    let max = (0..logits.len())
        .filter(|&i| keep(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidMask("mask covers every label".into()));
    }
    let mut sum = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        *o = if keep(i) {
            let e = ((logits[i] - max) / tau).exp();
            sum += e;
            e
        } else {
            0.0
        };
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Row-wise `exp(z_i / tau)` normalized over unmasked labels. Output is
/// always `f64`.
pub fn softmax_with_temperature<T: Scalar>(
    logits: &Tensor<T>,
    tau: f64,
    mask: Option<&LabelSet>,
) -> Result<Tensor<f64>> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "expected batch x classes, got {:?}",
            logits.shape()
        )));
    }
    let classes = logits.shape()[1];
    if let Some(m) = mask {
        if m.classes() != classes {
            return Err(Error::InvalidMask(format!(
                "mask over {} classes applied to {classes} logits",
                m.classes()
            )));
        }
    }
    let mut out = Tensor::zeros(logits.shape().to_vec());
    let mut row = vec![0.0; classes];
    for (r, dst) in out.data_mut().chunks_exact_mut(classes.max(1)).enumerate() {
        for (v, &z) in row.iter_mut().zip(logits.row(r)) {
            *v = z.as_f64();
        }
        masked_softmax_row(&row, tau, mask.map(LabelSet::as_mask), dst)?;
    }
    Ok(out)
}

// SPDX-License-Identifier: Apache-2.0

use super::{check_logits, log_sum_exp, LossOutput};
use crate::error::{Error, Result};
use crate::labels::Label;
use crate::nn::Tensor;

/// Mean of `-log softmax(z)[y]`; gradient `(softmax(z) - onehot) / batch`.
pub fn cross_entropy(logits: &Tensor<f64>, targets: &[Label]) -> Result<LossOutput> {
    let (n, c) = check_logits(logits, Some(targets))?;
    let mut grad = Tensor::zeros(vec![n, c]);
    let mut total = 0.0;
    for (r, (g, &y)) in grad.data_mut().chunks_exact_mut(c).zip(targets).enumerate() {
        let z = logits.row(r);
        let lse = log_sum_exp(z, 1.0, |_| true);
        total += lse - z[y.index()];
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = (z[i] - lse).exp() / n as f64;
        }
        g[y.index()] -= 1.0 / n as f64;
    }
    Ok(LossOutput {
        value: total / n as f64,
        grad,
    })
}

/// Mean `KL(softmax(teacher / tau) || softmax(student / tau))`.
pub fn kd_loss(student: &Tensor<f64>, teacher: &Tensor<f64>, tau: f64) -> Result<LossOutput> {
    let (n, c) = check_logits(student, None)?;
    if teacher.shape() != student.shape() {
        return Err(Error::Shape(format!(
            "teacher logits {:?} differ from student {:?}",
            teacher.shape(),
            student.shape()
        )));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let mut grad = Tensor::zeros(vec![n, c]);
    let mut total = 0.0;
    for (r, g) in grad.data_mut().chunks_exact_mut(c).enumerate() {
        let (zs, zt) = (student.row(r), teacher.row(r));
        let lse_s = log_sum_exp(zs, tau, |_| true);
        let lse_t = log_sum_exp(zt, tau, |_| true);
        for i in 0..c {
            let log_q = zt[i] / tau - lse_t;
            let log_s = zs[i] / tau - lse_s;
            let q = log_q.exp();
            if q > 0.0 {
                total += q * (log_q - log_s);
            }
            g[i] = (log_s.exp() - q) / (tau * n as f64);
        }
    }
    Ok(LossOutput {
        value: total / n as f64,
        grad,
    })
}

/// Cross-entropy against `(1 - mu) onehot + mu / C`.
pub fn label_smoothing_loss(logits: &Tensor<f64>, targets: &[Label], mu: f64) -> Result<LossOutput> {
    let (n, c) = check_logits(logits, Some(targets))?;
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::config(format!("smoothing must be in [0, 1), got {mu}")));
    }
    let mut grad = Tensor::zeros(vec![n, c]);
    let mut total = 0.0;
    let off = mu / c as f64;
    for (r, (g, &y)) in grad.data_mut().chunks_exact_mut(c).zip(targets).enumerate() {
        let z = logits.row(r);
        let lse = log_sum_exp(z, 1.0, |_| true);
        for i in 0..c {
            let q = if i == y.index() { 1.0 - mu + off } else { off };
            let log_p = z[i] - lse;
            if q > 0.0 {
                total -= q * log_p;
            }
            g[i] = (log_p.exp() - q) / n as f64;
        }
    }
    Ok(LossOutput {
        value: total / n as f64,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[usize]) -> Vec<Label> {
        v.iter().map(|&i| Label::from_index(i)).collect()
    }

    fn t(rows: usize, data: Vec<f64>) -> Tensor<f64> {
        let c = data.len() / rows;
        Tensor::new(vec![rows, c], data).unwrap()
    }

    #[test]
    fn ce_confident_is_near_zero() {
        let out = cross_entropy(&t(1, vec![50.0, 0.0, 0.0]), &labels(&[0])).unwrap();
        assert!(out.value < 1e-20);
    }

    #[test]
    fn ce_uniform_is_ln_c() {
        let out = cross_entropy(&Tensor::zeros(vec![2, 10]), &labels(&[3, 7])).unwrap();
        assert!((out.value - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ce_matches_scalar_formula() {
        let z = [0.3, -1.2, 2.2, 0.7];
        let out = cross_entropy(&t(1, z.to_vec()), &labels(&[1])).unwrap();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        assert!((out.value - -(z[1].exp() / denom).ln()).abs() < 1e-14);
    }

    #[test]
    fn ce_label_out_of_range() {
        let err = cross_entropy(&Tensor::zeros(vec![1, 3]), &labels(&[3])).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { .. }));
    }

    #[test]
    fn kd_self_divergence_is_zero() {
        let z = t(2, vec![0.1, 2.0, -1.0, 3.0, 0.0, 0.5]);
        let out = kd_loss(&z, &z, 2.0).unwrap();
        assert!(out.value.abs() < 1e-15);
        assert!(out.grad.data().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn kd_uniform_teacher_matches_direct_evaluation() {
        let zs = [8.0, 0.0, 0.0, 0.0];
        let out = kd_loss(&t(1, zs.to_vec()), &Tensor::zeros(vec![1, 4]), 1.0).unwrap();
        let denom: f64 = zs.iter().map(|v| v.exp()).sum();
        let expect: f64 = zs.iter().map(|v| 0.25 * (0.25 / (v.exp() / denom)).ln()).sum();
        assert!((out.value - expect).abs() < 1e-12);
    }

    #[test]
    fn ls_zero_is_ce() {
        let z = t(2, vec![0.1, 2.0, -1.0, 3.0, 0.0, 0.5]);
        let y = labels(&[2, 0]);
        let ls = label_smoothing_loss(&z, &y, 0.0).unwrap();
        let ce = cross_entropy(&z, &y).unwrap();
        assert!((ls.value - ce.value).abs() < 1e-15);
        for (a, b) in ls.grad.data().iter().zip(ce.grad.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ls_uniform_logits_is_ln_c() {
        // any target distribution against uniform predictions costs ln C
        let out = label_smoothing_loss(&Tensor::zeros(vec![1, 5]), &labels(&[4]), 0.1).unwrap();
        assert!((out.value - 5f64.ln()).abs() < 1e-14);
    }
}

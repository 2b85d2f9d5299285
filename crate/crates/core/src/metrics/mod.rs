// SPDX-License-Identifier: Apache-2.0

//! Test-set evaluation, per-round records, the rounds-to-target speedup
//! metric, and the CSV files derived from them.

mod csv_out;

pub use csv_out::{
    parse_heatmap, parse_rounds_csv, rounds_csv, speedup_csv, write_heatmap, write_rounds_csv, Heatmap, HeatmapKind,
    RoundsRow, SpeedupRow,
};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nn::{forward, ModelWeights, Scalar};

/// Examples per forward pass during evaluation.
const EVAL_BATCH: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    /// Predictions per class, indexed by class index.
    pub prediction_counts: Vec<usize>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy and prediction histogram of `model` on `test`.
pub fn evaluate<T: Scalar>(model: &ModelWeights<T>, test: &Dataset) -> Result<Evaluation> {
    let classes = model.architecture().classes();
    if classes != test.classes() {
        return Err(Error::Shape(format!(
            "model has {classes} classes, test set has {}",
            test.classes()
        )));
    }
    let mut counts = vec![0usize; classes];
    let mut correct = 0;
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let (x, y) = test.batch(chunk);
        let logits = forward(model, &x.cast::<T>())?;
        for (row, label) in logits.data().chunks_exact(classes).zip(&y) {
            let pred = argmax(row);
            counts[pred] += 1;
            correct += usize::from(pred == label.index());
        }
    }
    let accuracy = if test.is_empty() {
        0.0
    } else {
        correct as f64 / test.len() as f64
    };
    Ok(Evaluation {
        accuracy,
        correct,
        prediction_counts: counts,
    })
}

/// Everything logged about one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0-based round index.
    pub round: usize,
    pub accuracy: f64,
    pub prediction_counts: Vec<usize>,
    /// Per-class example counts summed over the clients that trained.
    pub selected_sample_counts: Vec<usize>,
    pub loss_kind: LossKind,
    pub lr: f64,
    /// Ids of the clients that trained, ascending.
    pub selected: Vec<usize>,
    pub broadcast_digest: u64,
    /// Digest of the teacher each selected client distilled from, in the
    /// order of `selected`.
    pub teacher_digests: Vec<u64>,
    /// Summed local-training time across clients. Not deterministic.
    pub client_seconds: f64,
    /// Wall time of the whole round. Not deterministic.
    pub wall_seconds: f64,
}

impl RoundRecord {
    /// The record with timing fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> RoundRecord {
        RoundRecord {
            client_seconds: 0.0,
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Running maximum of accuracy; non-decreasing by construction.
pub fn best_so_far(records: &[RoundRecord]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    records
        .iter()
        .map(|r| {
            best = best.max(r.accuracy);
            best
        })
        .collect()
}

/// Best accuracy and the first round index attaining it.
pub fn best_accuracy(records: &[RoundRecord]) -> Option<(f64, usize)> {
    let best = records.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    records.iter().find(|r| r.accuracy >= best).map(|r| (best, r.round))
}

/// Rounds needed by a method to reach the baseline's best accuracy,
/// relative to the baseline's own count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub target: f64,
    /// Number of rounds (1-based count) the baseline needed.
    pub baseline_rounds: usize,
    /// `None` when the method never reached the target.
    pub method_rounds: Option<usize>,
}

impl SpeedupReport {
    pub fn is_failed(&self) -> bool {
        self.method_rounds.is_none()
    }

    pub fn ratio(&self) -> Option<f64> {
        self.method_rounds.map(|m| self.baseline_rounds as f64 / m as f64)
    }
}

fn rounds_to_reach(records: &[RoundRecord], target: f64) -> Option<usize> {
    records.iter().position(|r| r.accuracy >= target).map(|i| i + 1)
}

pub fn speedup(baseline: &[RoundRecord], method: &[RoundRecord]) -> Result<SpeedupReport> {
    let (target, _) = best_accuracy(baseline).ok_or_else(|| Error::config("speedup baseline has no rounds"))?;
    let baseline_rounds = rounds_to_reach(baseline, target).expect("baseline reaches its own maximum");
    Ok(SpeedupReport {
        target,
        baseline_rounds,
        method_rounds: rounds_to_reach(method, target),
    })
}

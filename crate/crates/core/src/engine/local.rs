// SPDX-License-Identifier: Apache-2.0

use crate::clock::Stopwatch;

use rand::seq::SliceRandom;

use super::{Augment, ClientState, Schedule};
use crate::data::{crop_and_flip, Dataset};
use crate::error::{Error, Result};
use crate::losses::{prox_term, LossKind, LossSpec, TeacherContext};
use crate::nn::{backward, forward, forward_cached, ModelWeights, SgdState};
use crate::rng::{stream, Purpose};

/// Inputs to one client's local training in one round. Everything is
/// borrowed immutably, so tasks can run concurrently.
#[derive(Debug, Clone, Copy)]
pub struct LocalTask<'a> {
    pub client: &'a ClientState,
    /// The broadcast model; also the frozen teacher.
    pub global: &'a ModelWeights<f32>,
    pub train: &'a Dataset,
    pub spec: &'a LossSpec,
    pub schedule: &'a Schedule,
    pub lr: f64,
    pub round: usize,
    pub seed: u64,
    pub augment: Augment,
}

#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub client: usize,
    pub weights: ModelWeights<f32>,
    pub samples: usize,
    pub loss_kind: LossKind,
    pub teacher_digest: u64,
    /// Mean batch loss over the final epoch; NaN when no step ran.
    pub last_epoch_loss: f64,
    pub seconds: f64,
}

/// Runs E epochs of mini-batch SGD from the broadcast weights.
pub fn local_train(task: &LocalTask<'_>) -> Result<LocalUpdate> {
    let start = Stopwatch::start();
    let client = task.client;
    let part = &client.partition;
    if part.is_empty() {
        return Err(Error::Internal(format!("client {} has no examples", client.id)));
    }
    let kind = client.effective_kind(task.spec.kind);
    let spec = LossSpec {
        kind,
        ..task.spec.clone()
    };
    let teacher = task.global;
    let mut local = teacher.clone();
    let mut opt = SgdState::<f32>::new(task.lr, task.schedule.client_momentum, task.schedule.weight_decay)?;

    let (k, t) = (client.id as u64, task.round as u64);
    let mut shuffle_rng = stream(task.seed, Purpose::Shuffle, k, t);
    let mut augment_rng = stream(task.seed, Purpose::Augment, k, t);
    let image_dims: Option<[usize; 3]> = match task.train.feature_shape() {
        &[c, h, w] if task.augment.enabled() => Some([c, h, w]),
        _ => None,
    };
    let width = task.train.feature_len();
    let mut order = part.indices.clone();
    let mut last_epoch_loss = f64::NAN;

    for _ in 0..task.schedule.local_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(task.schedule.batch_size) {
            let (mut x, y) = task.train.batch(chunk);
            if let Some(dims) = image_dims {
                for img in x.data_mut().chunks_exact_mut(width) {
                    crop_and_flip(img, dims, task.augment.pad, task.augment.flip, &mut augment_rng);
                }
            }
            let (logits, cache) = forward_cached(&local, &x)?;
            let teacher_logits = if kind.needs_teacher_model() {
                Some(forward(teacher, &x)?.cast::<f64>())
            } else {
                None
            };
            let ctx = match &teacher_logits {
                Some(z) => TeacherContext::GlobalModel(z),
                None => TeacherContext::None,
            };
            let loss = spec.evaluate(&logits.cast::<f64>(), ctx, &y, Some(&client.mask))?;
            if !loss.value.is_finite() {
                return Err(Error::Internal(format!(
                    "non-finite {kind} loss on client {}",
                    client.id
                )));
            }
            let mut grads = backward(&local, &cache, &loss.grad.cast::<f32>())?;
            let mut value = loss.value;
            if spec.prox_mu > 0.0 {
                let (p, pg) = prox_term(&local, teacher, spec.prox_mu)?;
                value += p;
                grads.zip_apply(&pg, |g, h| *g += h)?;
            }
            opt.step(&mut local, &grads)?;
            sum += value;
            batches += 1;
        }
        last_epoch_loss = sum / batches as f64;
    }
    if !local.all_finite() {
        return Err(Error::Internal(format!(
            "client {} produced non-finite weights",
            client.id
        )));
    }

    Ok(LocalUpdate {
        client: client.id,
        weights: local,
        samples: part.len(),
        loss_kind: kind,
        teacher_digest: teacher.digest(),
        last_epoch_loss,
        seconds: start.seconds(),
    })
}

// SPDX-License-Identifier: Apache-2.0

//! The federated round loop: broadcast, select, local training, upload,
//! aggregation, optional server momentum, evaluation.

mod aggregate;
mod local;

pub use aggregate::{aggregate, server_momentum_step, Weighting};
pub use local::{local_train, LocalTask, LocalUpdate};

use crate::clock::Stopwatch;

use log::{info, warn};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::losses::{LossKind, LossSpec};
use crate::metrics::{evaluate, RoundRecord};
use crate::nn::{Architecture, ModelWeights};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub rounds: usize,
    pub local_epochs: usize,
    pub clients_per_round: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Rounds `t < switch_round` train LMD-Tf in place of LMD.
    pub switch_round: usize,
    /// Server momentum coefficient; 0 disables it.
    pub server_momentum: f64,
    pub client_momentum: f64,
    pub weight_decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            rounds: 200,
            local_epochs: 5,
            clients_per_round: 10,
            lr0: 0.01,
            lr_decay: 0.99,
            batch_size: 50,
            switch_round: 0,
            server_momentum: 0.0,
            client_momentum: 0.9,
            weight_decay: 1e-5,
        }
    }
}

impl Schedule {
    /// Client learning rate in 0-based round `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(t as i32)
    }

    /// Every violated constraint as `schedule.<field>: message`.
    pub fn violations(&self, clients: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.clients_per_round == 0 || self.clients_per_round > clients {
            out.push(format!(
                "schedule.clients_per_round: must be in 1..={clients}, got {}",
                self.clients_per_round
            ));
        }
        if self.switch_round > self.rounds {
            out.push(format!(
                "schedule.switch_round: must be at most schedule.rounds = {}, got {}",
                self.rounds, self.switch_round
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            out.push(format!("schedule.lr: must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            out.push(format!("schedule.lr_decay: must be in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size == 0 {
            out.push("schedule.batch_size: must be positive".into());
        }
        if !(0.0..1.0).contains(&self.server_momentum) {
            out.push(format!(
                "schedule.server_momentum: must be in [0, 1), got {}",
                self.server_momentum
            ));
        }
        if !(0.0..1.0).contains(&self.client_momentum) {
            out.push(format!(
                "schedule.momentum: must be in [0, 1), got {}",
                self.client_momentum
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!(
                "schedule.weight_decay: must be non-negative, got {}",
                self.weight_decay
            ));
        }
        out
    }
}

/// Which label set the LMD family masks out of the teacher.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// The client's majority labels.
    #[default]
    Majority,
    /// Every label the client holds at least once.
    Present,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(MaskMode::Majority),
            "present" => Ok(MaskMode::Present),
            _ => Err(Error::config(format!(
                "unknown mask set {s:?} (expected majority or present)"
            ))),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Majority => "majority",
            MaskMode::Present => "present",
        })
    }
}

/// Random crop with zero padding and horizontal flip, per example.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub pad: usize,
    pub flip: bool,
}

impl Augment {
    pub fn enabled(self) -> bool {
        self.pad > 0 || self.flip
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub schedule: Schedule,
    pub loss: LossSpec,
    pub weighting: Weighting,
    pub mask_mode: MaskMode,
    pub augment: Augment,
    pub seed: u64,
    /// Local-training threads per round; results do not depend on it.
    pub workers: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            schedule: Schedule::default(),
            loss: LossSpec::default(),
            weighting: Weighting::Simple,
            mask_mode: MaskMode::Majority,
            augment: Augment::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl EngineConfig {
    pub fn violations(&self, clients: usize) -> Vec<String> {
        let mut out = self.schedule.violations(clients);
        out.extend(self.loss.violations());
        if self.schedule.switch_round > 0 && self.loss.kind != LossKind::Lmd {
            out.push(format!(
                "schedule.switch_round: switching applies to loss.kind = lmd only, got {}",
                self.loss.kind
            ));
        }
        if self.workers == 0 {
            out.push("run.workers: must be positive".into());
        }
        out
    }
}

/// Loss trained in round `t` under the switching schedule.
pub fn round_loss_kind(configured: LossKind, switch_round: usize, t: usize) -> LossKind {
    if configured == LossKind::Lmd && t < switch_round {
        LossKind::LmdTf
    } else {
        configured
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub partition: ClientPartition,
    /// Labels masked out of the teacher under the configured mode.
    pub mask: LabelSet,
}

impl ClientState {
    pub fn new(partition: ClientPartition, mode: MaskMode) -> Self {
        let mask = match mode {
            MaskMode::Majority => partition.majority().clone(),
            MaskMode::Present => partition.present(),
        };
        ClientState {
            id: partition.client,
            partition,
            mask,
        }
    }

    /// A client whose mask covers every label has no minority knowledge to
    /// distill.
    pub fn is_degenerate(&self) -> bool {
        self.mask.is_full()
    }

    /// The loss this client actually trains when the round asks for `kind`.
    pub fn effective_kind(&self, kind: LossKind) -> LossKind {
        if kind.uses_majority() && self.is_degenerate() {
            LossKind::Ce
        } else {
            kind
        }
    }
}

/// Uniform sample of `count` ids from `eligible` without replacement,
/// returned ascending.
pub fn select_clients(eligible: &[usize], count: usize, seed: u64, round: usize) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Select, 0, round as u64);
    let count = count.min(eligible.len());
    let mut out: Vec<usize> = sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Index of the next round to run.
    pub round: usize,
    pub global: ModelWeights<f32>,
    pub momentum_buffer: Option<ModelWeights<f32>>,
}

pub struct Federation<'a> {
    config: EngineConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    clients: Vec<ClientState>,
    eligible: Vec<usize>,
    state: ServerState,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Federation<'a> {
    pub fn new(
        config: EngineConfig,
        arch: &Architecture,
        train: &'a Dataset,
        test: &'a Dataset,
        partitions: Vec<ClientPartition>,
    ) -> Result<Self> {
        if arch.classes() != train.classes() || arch.classes() != test.classes() {
            return Err(Error::Shape(format!(
                "model has {} classes, train {} and test {}",
                arch.classes(),
                train.classes(),
                test.classes()
            )));
        }
        if arch.input_len() != train.feature_len() || arch.input_len() != test.feature_len() {
            return Err(Error::Shape(format!(
                "model expects {} features, data has {}",
                arch.input_len(),
                train.feature_len()
            )));
        }
        let violations = config.violations(partitions.len());
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }
        let clients: Vec<ClientState> = partitions
            .into_iter()
            .map(|p| ClientState::new(p, config.mask_mode))
            .collect();
        let eligible: Vec<usize> = clients
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.partition.is_empty())
            .map(|(i, _)| i)
            .collect();
        if let Some((i, c)) = clients.iter().enumerate().find(|(i, c)| c.id != *i) {
            return Err(Error::Internal(format!("partition {i} carries client id {}", c.id)));
        }
        if eligible.is_empty() {
            return Err(Error::config("no client holds any examples"));
        }
        for c in clients.iter().filter(|c| c.partition.is_empty()) {
            warn!("client {} has no examples and is never selected", c.id);
        }
        if eligible.len() < config.schedule.clients_per_round {
            warn!(
                "only {} clients hold examples; rounds select {} instead of {}",
                eligible.len(),
                eligible.len(),
                config.schedule.clients_per_round
            );
        }
        if config.loss.kind.uses_majority() || config.schedule.switch_round > 0 {
            for c in clients.iter().filter(|c| !c.partition.is_empty() && c.is_degenerate()) {
                warn!("client {} has no minority labels and trains with ce", c.id);
            }
        }
        let global = ModelWeights::init(arch, &mut stream(config.seed, Purpose::Init, 0, 0))?;

        #[cfg(feature = "parallel")]
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::Internal(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };

        Ok(Federation {
            config,
            train,
            test,
            clients,
            eligible,
            state: ServerState {
                round: 0,
                global,
                momentum_buffer: None,
            },
            #[cfg(feature = "parallel")]
            pool,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn global(&self) -> &ModelWeights<f32> {
        &self.state.global
    }

    /// Continues from a saved state, so a federation can be rebuilt
    /// between rounds without keeping the borrow alive.
    pub fn with_state(mut self, state: ServerState) -> Result<Self> {
        self.state.global.check_compatible(&state.global)?;
        self.state = state;
        Ok(self)
    }

    pub fn into_state(self) -> ServerState {
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.round >= self.config.schedule.rounds
    }

    /// Runs the remaining rounds.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        self.run_with(|_| {})
    }

    pub fn run_with(&mut self, mut on_round: impl FnMut(&RoundRecord)) -> Result<Vec<RoundRecord>> {
        let mut out = Vec::with_capacity(self.config.schedule.rounds.saturating_sub(self.state.round));
        while !self.is_finished() {
            let rec = self.run_round()?;
            on_round(&rec);
            out.push(rec);
        }
        Ok(out)
    }

    /// Runs one round. A failure leaves the state at the failing round.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.state.round;
        self.round_inner(t).map_err(|e| Error::Round {
            round: t,
            source: Box::new(e),
        })
    }

    fn round_inner(&mut self, t: usize) -> Result<RoundRecord> {
        let start = Stopwatch::start();
        let sched = &self.config.schedule;
        let lr = sched.lr_at(t);
        let kind = round_loss_kind(self.config.loss.kind, sched.switch_round, t);
        let spec = LossSpec {
            kind,
            ..self.config.loss.clone()
        };
        let selected = select_clients(&self.eligible, sched.clients_per_round, self.config.seed, t);
        let global = &self.state.global;
        let tasks: Vec<LocalTask<'_>> = selected
            .iter()
            .map(|&k| LocalTask {
                client: &self.clients[k],
                global,
                train: self.train,
                spec: &spec,
                schedule: sched,
                lr,
                round: t,
                seed: self.config.seed,
                augment: self.config.augment,
            })
            .collect();
        let updates = self.run_tasks(&tasks)?;

        let broadcast_digest = global.digest();
        let uploads: Vec<&ModelWeights<f32>> = updates.iter().map(|u| &u.weights).collect();
        let samples: Vec<usize> = updates.iter().map(|u| u.samples).collect();
        let aggregated = aggregate(&uploads, &samples, self.config.weighting)?;
        let next = server_momentum_step(
            global,
            &aggregated,
            &mut self.state.momentum_buffer,
            sched.server_momentum,
        )?;
        let eval = evaluate(&next, self.test)?;

        let classes = self.train.classes();
        let mut selected_sample_counts = vec![0usize; classes];
        for &k in &selected {
            for (acc, &n) in selected_sample_counts
                .iter_mut()
                .zip(self.clients[k].partition.label_counts())
            {
                *acc += n;
            }
        }
        let record = RoundRecord {
            round: t,
            accuracy: eval.accuracy,
            prediction_counts: eval.prediction_counts,
            selected_sample_counts,
            loss_kind: kind,
            lr,
            selected,
            broadcast_digest,
            teacher_digests: updates.iter().map(|u| u.teacher_digest).collect(),
            client_seconds: updates.iter().map(|u| u.seconds).sum(),
            wall_seconds: start.seconds(),
        };
        info!(
            "round {t}: acc {:.4} lr {lr:.6} loss {kind} clients {:?}",
            record.accuracy, record.selected
        );
        self.state.global = next;
        self.state.round += 1;
        Ok(record)
    }

    fn run_tasks(&self, tasks: &[LocalTask<'_>]) -> Result<Vec<LocalUpdate>> {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| tasks.par_iter().map(local_train).collect());
        }
        tasks.iter().map(local_train).collect()
    }
}

#[cfg(test)]
mod tests;

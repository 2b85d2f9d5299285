// SPDX-License-Identifier: Apache-2.0

//! Non-IID client partitions and per-client label statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::{Label, LabelSet};
use crate::rng::{stream, Purpose};

/// How a client's labels are split into majority and minority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MajorityRule {
    /// `n_{k,y} >= n_k / C`: at least the per-class mean.
    #[default]
    MeanThreshold,
    /// `n_{k,y} >= sqrt(n_k)`.
    SqrtThreshold,
}

impl MajorityRule {
    pub fn is_majority(self, count: usize, total: usize, classes: usize) -> bool {
        if count == 0 {
            return false;
        }
        match self {
            MajorityRule::MeanThreshold => count * classes >= total,
            MajorityRule::SqrtThreshold => count * count >= total,
        }
    }
}

/// One client's share of the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPartition {
    pub client: usize,
    pub indices: Vec<usize>,
    label_counts: Vec<usize>,
    majority: LabelSet,
}

impl ClientPartition {
    pub fn new(client: usize, indices: Vec<usize>, ds: &Dataset, rule: MajorityRule) -> Self {
        let label_counts = ds.label_counts(indices.iter().copied());
        let mut p = ClientPartition {
            client,
            indices,
            label_counts,
            majority: LabelSet::empty(ds.classes()),
        };
        classify_majority(&mut p, rule);
        p
    }

    /// Builds a partition from counts alone; `indices` is left empty.
    pub fn from_counts(client: usize, label_counts: Vec<usize>, rule: MajorityRule) -> Self {
        let mut p = ClientPartition {
            client,
            indices: Vec::new(),
            majority: LabelSet::empty(label_counts.len()),
            label_counts,
        };
        classify_majority(&mut p, rule);
        p
    }

    pub fn classes(&self) -> usize {
        self.label_counts.len()
    }

    /// `n_k`.
    pub fn len(&self) -> usize {
        self.label_counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `n_{k,y}` indexed by `y - 1`.
    pub fn label_counts(&self) -> &[usize] {
        &self.label_counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.label_counts[label.index()]
    }

    /// `M_k`.
    pub fn majority(&self) -> &LabelSet {
        &self.majority
    }

    pub fn minority(&self) -> LabelSet {
        self.majority.complement()
    }

    /// Labels with at least one local example.
    pub fn present(&self) -> LabelSet {
        LabelSet::from_mask(self.label_counts.iter().map(|&n| n > 0).collect())
    }

    /// `C_k = |M_k|`.
    pub fn majority_count(&self) -> usize {
        self.majority.len()
    }
}

/// Recomputes `M_k` under `rule`.
pub fn classify_majority(p: &mut ClientPartition, rule: MajorityRule) {
    let total = p.len();
    let classes = p.classes();
    p.majority = LabelSet::from_mask(
        p.label_counts
            .iter()
            .map(|&n| rule.is_majority(n, total, classes))
            .collect(),
    );
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    /// Label-sorted equal slices, `shards` per client.
    Sharding { shards: usize },
    /// Per-label Dirichlet(alpha) proportions over clients.
    Lda { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub strategy: PartitionStrategy,
    pub clients: usize,
    pub seed: u64,
    pub rule: MajorityRule,
    /// LDA only: redraw until every client has data.
    pub require_nonempty: bool,
    pub max_retries: usize,
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::InfeasiblePartition("client count must be at least 1".into()));
        }
        match self.strategy {
            PartitionStrategy::Sharding { shards: 0 } => Err(Error::InfeasiblePartition(
                "shards per client must be at least 1".into(),
            )),
            PartitionStrategy::Lda { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(Error::InfeasiblePartition(
                format!("alpha must be positive, got {alpha}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Vec<ClientPartition>> {
        self.validate()?;
        match self.strategy {
            PartitionStrategy::Sharding { shards } => {
                partition_sharding(ds, self.clients, shards, self.seed, self.rule)
            }
            PartitionStrategy::Lda { alpha } => {
                let attempts = if self.require_nonempty {
                    self.max_retries.max(1)
                } else {
                    1
                };
                for attempt in 0..attempts {
                    let parts = lda_attempt(ds, self.clients, alpha, self.seed, attempt as u64, self.rule)?;
                    if !self.require_nonempty || parts.iter().all(|p| !p.is_empty()) {
                        return Ok(parts);
                    }
                }
                Err(Error::InfeasiblePartition(format!(
                    "LDA(alpha={alpha}) left a client empty after {attempts} draws"
                )))
            }
        }
    }
}

/// Sorts by label, cuts `clients * shards` contiguous slices whose sizes
/// differ by at most one, shuffles the slices and deals `shards` to each
/// client.
pub fn partition_sharding(
    ds: &Dataset,
    clients: usize,
    shards: usize,
    seed: u64,
    rule: MajorityRule,
) -> Result<Vec<ClientPartition>> {
    let total = clients
        .checked_mul(shards)
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InfeasiblePartition("need at least one shard".into()))?;
    if total > ds.len() {
        return Err(Error::InfeasiblePartition(format!(
            "{clients} clients x {shards} shards exceeds {} examples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| (ds.labels()[i], i));

    let base = ds.len() / total;
    let extra = ds.len() % total;
    let mut bounds = Vec::with_capacity(total);
    let mut start = 0;
    for s in 0..total {
        let len = base + usize::from(s < extra);
        bounds.push(start..start + len);
        start += len;
    }

    let mut shard_ids: Vec<usize> = (0..total).collect();
    shard_ids.shuffle(&mut stream(seed, Purpose::Partition, 0, 0));

    Ok(shard_ids
        .chunks_exact(shards)
        .enumerate()
        .map(|(k, ids)| {
            let mut idx: Vec<usize> = ids
                .iter()
                .flat_map(|&s| order[bounds[s].clone()].iter().copied())
                .collect();
            idx.sort_unstable();
            ClientPartition::new(k, idx, ds, rule)
        })
        .collect())
}

/// A single LDA draw. Clients may come out empty.
pub fn partition_lda(
    ds: &Dataset,
    clients: usize,
    alpha: f64,
    seed: u64,
    rule: MajorityRule,
) -> Result<Vec<ClientPartition>> {
    lda_attempt(ds, clients, alpha, seed, 0, rule)
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InfeasiblePartition(e.to_string()))?;
    for _ in 0..64 {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|g| g / sum).collect());
        }
    }
    Err(Error::InfeasiblePartition(format!(
        "Dirichlet({alpha}) underflowed repeatedly"
    )))
}

fn lda_attempt(
    ds: &Dataset,
    clients: usize,
    alpha: f64,
    seed: u64,
    attempt: u64,
    rule: MajorityRule,
) -> Result<Vec<ClientPartition>> {
    if clients == 0 {
        return Err(Error::InfeasiblePartition("client count must be at least 1".into()));
    }
    let mut rng = stream(seed, Purpose::Partition, 1, attempt);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for c in 0..ds.classes() {
        let props = dirichlet(alpha, clients, &mut rng)?;
        let pick = WeightedIndex::new(&props).map_err(|e| Error::InfeasiblePartition(e.to_string()))?;
        for i in (0..ds.len()).filter(|&i| ds.labels()[i].index() == c) {
            assigned[pick.sample(&mut rng)].push(i);
        }
    }
    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(k, mut idx)| {
            idx.sort_unstable();
            ClientPartition::new(k, idx, ds, rule)
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ClientExport {
    indices: Vec<usize>,
    label_counts: BTreeMap<u32, usize>,
    majority_set: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct PartitionExport {
    classes: usize,
    clients: BTreeMap<usize, ClientExport>,
}

/// JSON mapping client id to indices, label counts (keyed by 1-based label)
/// and majority set.
pub fn partitions_to_json(parts: &[ClientPartition]) -> String {
    let export = PartitionExport {
        classes: parts.first().map_or(0, ClientPartition::classes),
        clients: parts
            .iter()
            .map(|p| {
                (
                    p.client,
                    ClientExport {
                        indices: p.indices.clone(),
                        label_counts: p
                            .label_counts
                            .iter()
                            .enumerate()
                            .map(|(i, &n)| (Label::from_index(i).get(), n))
                            .collect(),
                        majority_set: p.majority.iter().map(Label::get).collect(),
                    },
                )
            })
            .collect(),
    };
    serde_json::to_string_pretty(&export).expect("partition export serializes")
}

pub fn write_partitions(path: &Path, parts: &[ClientPartition]) -> Result<()> {
    std::fs::write(path, partitions_to_json(parts) + "\n").map_err(|e| Error::io(path, e))
}

/// One client of a parsed partition export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedClient {
    pub client: usize,
    pub indices: Vec<usize>,
    pub label_counts: Vec<usize>,
    /// 1-based labels.
    pub majority: Vec<u32>,
}

pub fn read_partitions(path: &Path) -> Result<Vec<ExportedClient>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let export: PartitionExport = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(export
        .clients
        .into_iter()
        .map(|(client, c)| ExportedClient {
            client,
            indices: c.indices,
            label_counts: c.label_counts.into_values().collect(),
            majority: c.majority_set,
        })
        .collect())
}

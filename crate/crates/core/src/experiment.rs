// SPDX-License-Identifier: Apache-2.0

//! Single runs and method comparisons, with their files on disk.
//!
//! A run writes into `<output>/<short config hash>/`:
//! `config.txt` (resolved snapshot), `partition.json`, `rounds.csv`,
//! `pred_heatmap.csv`, `sample_heatmap.csv` and `summary.json`.

use crate::clock::Stopwatch;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, DatasetSource, RunConfig};
use crate::data::{
    load_csv_dataset, load_mnist_dir, synth_gaussian_dataset, write_partitions, ClientPartition, Dataset, GaussianSpec,
    Normalization, Split,
};
use crate::engine::Federation;
use crate::error::{Error, Result};
use crate::metrics::{
    best_accuracy, speedup, speedup_csv, write_heatmap, write_rounds_csv, Heatmap, HeatmapKind, RoundRecord, SpeedupRow,
};
use crate::nn::Architecture;

pub fn load_datasets(cfg: &DatasetConfig) -> Result<(Dataset, Dataset)> {
    match cfg.source {
        DatasetSource::Mnist => {
            let dir = cfg.resolve(&cfg.path);
            let norm = if cfg.normalize {
                Normalization::MNIST
            } else {
                Normalization::NONE
            };
            Ok((
                load_mnist_dir(&dir, Split::Train, norm)?,
                load_mnist_dir(&dir, Split::Test, norm)?,
            ))
        }
        DatasetSource::Csv => {
            let classes = (cfg.classes > 0).then_some(cfg.classes);
            let train = load_csv_dataset(&cfg.resolve(&cfg.train), classes, Split::Train)?;
            let test = load_csv_dataset(
                &cfg.resolve(&cfg.test),
                Some(classes.unwrap_or(train.classes())),
                Split::Test,
            )?;
            if test.classes() != train.classes() {
                return Err(Error::config(format!(
                    "dataset.test: has {} classes, train has {}",
                    test.classes(),
                    train.classes()
                )));
            }
            Ok((train, test))
        }
        DatasetSource::Synth => {
            let test_spec = GaussianSpec {
                per_class: cfg.synth_test_per_class,
                ..cfg.synth.clone()
            };
            Ok((
                synth_gaussian_dataset(&cfg.synth, cfg.synth_seed, Split::Train),
                synth_gaussian_dataset(&test_spec, cfg.synth_seed, Split::Test),
            ))
        }
    }
}

/// Data, architecture and client partitions for a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub arch: Architecture,
    pub partitions: Vec<ClientPartition>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (train, test) = load_datasets(&cfg.dataset)?;
    let arch = cfg.model.architecture(train.feature_shape(), train.classes())?;
    let partitions = cfg.partition.plan().apply(&train)?;
    Ok(Prepared {
        train,
        test,
        arch,
        partitions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub config_hash: String,
    pub loss_kind: String,
    pub rounds: usize,
    /// `None` when no round ran.
    pub best_accuracy: Option<f64>,
    pub best_round: Option<usize>,
    pub final_accuracy: Option<f64>,
    pub total_wall_seconds: f64,
    pub mean_client_seconds_per_round: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    let prepared = prepare(cfg)?;
    run_prepared(cfg, &prepared, "run")
}

/// Runs `cfg` on already-prepared data. The partitions in `prepared` are
/// used as given.
pub fn run_prepared(cfg: &RunConfig, prepared: &Prepared, name: &str) -> Result<RunOutput> {
    let start = Stopwatch::start();
    let hash = cfg.short_hash();
    let dir = cfg.output.join(&hash);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("config.txt"), &cfg.snapshot())?;
    write_partitions(&dir.join("partition.json"), &prepared.partitions)?;

    let mut fed = Federation::new(
        cfg.engine.clone(),
        &prepared.arch,
        &prepared.train,
        &prepared.test,
        prepared.partitions.clone(),
    )?;
    let records = fed.run()?;

    let classes = prepared.train.classes();
    write_rounds_csv(&dir.join("rounds.csv"), &records)?;
    write_heatmap(
        &dir.join("pred_heatmap.csv"),
        &Heatmap::from_records(&records, classes, HeatmapKind::Predictions),
    )?;
    write_heatmap(
        &dir.join("sample_heatmap.csv"),
        &Heatmap::from_records(&records, classes, HeatmapKind::SelectedSamples),
    )?;
    let best = best_accuracy(&records);
    let summary = RunSummary {
        name: name.to_string(),
        config_hash: hash,
        loss_kind: cfg.engine.loss.kind.to_string(),
        rounds: records.len(),
        best_accuracy: best.map(|b| b.0),
        best_round: best.map(|b| b.1),
        final_accuracy: records.last().map(|r| r.accuracy),
        total_wall_seconds: start.seconds(),
        mean_client_seconds_per_round: if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.client_seconds).sum::<f64>() / records.len() as f64
        },
    };
    write_json(&dir.join("summary.json"), &summary)?;
    info!(
        "{name}: best {:?} at round {:?}, {} rounds in {:.1}s -> {}",
        summary.best_accuracy,
        summary.best_round,
        summary.rounds,
        summary.total_wall_seconds,
        dir.display()
    );
    Ok(RunOutput { dir, records, summary })
}

/// A named set of overrides on the comparison's base config.
#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

/// One grid dimension; `method = None` applies it to every method.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub method: Option<String>,
    pub key: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonPlan {
    pub base: RunConfig,
    pub methods: Vec<Method>,
    pub grid: Vec<GridAxis>,
    pub baseline: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub method: String,
    /// The method name, followed by the grid point in brackets if any.
    pub label: String,
    pub config: RunConfig,
}

impl ComparisonPlan {
    /// The cross-product of each method with its grid axes.
    pub fn expand(&self) -> Result<Vec<Variant>> {
        if !self.methods.iter().any(|m| m.name == self.baseline) {
            return Err(Error::config(format!(
                "baseline {:?} is not one of the methods",
                self.baseline
            )));
        }
        for axis in &self.grid {
            if let Some(m) = &axis.method {
                if !self.methods.iter().any(|x| &x.name == m) {
                    return Err(Error::config(format!(
                        "grid axis {} names unknown method {m:?}",
                        axis.key
                    )));
                }
            }
        }
        let mut out = Vec::new();
        for m in &self.methods {
            let axes: Vec<&GridAxis> = self
                .grid
                .iter()
                .filter(|a| a.method.as_ref().is_none_or(|n| n == &m.name))
                .collect();
            let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
            for axis in &axes {
                points = points
                    .into_iter()
                    .flat_map(|p| {
                        axis.values.iter().map(move |v| {
                            let mut q = p.clone();
                            q.push((axis.key.clone(), v.clone()));
                            q
                        })
                    })
                    .collect();
            }
            for point in points {
                let mut overrides = m.overrides.clone();
                overrides.extend(point.iter().cloned());
                let config = self.base.clone().apply("", &overrides)?;
                let label = if point.is_empty() {
                    m.name.clone()
                } else {
                    let inner: Vec<String> = point.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    format!("{}[{}]", m.name, inner.join(","))
                };
                out.push(Variant {
                    method: m.name.clone(),
                    label,
                    config,
                });
            }
        }
        let first = &out[0].config;
        if let Some(v) = out
            .iter()
            .find(|v| v.config.dataset != first.dataset || v.config.partition != first.partition)
        {
            return Err(Error::config(format!(
                "{}: dataset and partition settings must match across a comparison",
                v.label
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub label: String,
    pub method: String,
    pub dir: PathBuf,
    pub summary: RunSummary,
    /// Whether this grid point has the method's best accuracy.
    pub best_of_method: bool,
}

#[derive(Debug, Clone)]
pub struct ComparisonOutput {
    pub entries: Vec<ComparisonEntry>,
    pub records: Vec<Vec<RoundRecord>>,
    pub speedup: Vec<SpeedupRow>,
}

/// Index of the first variant of `method` with the highest best accuracy.
fn best_variant(entries: &[ComparisonEntry], method: &str) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate().filter(|(_, e)| e.method == method) {
        let acc = e.summary.best_accuracy.unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((i, acc));
        }
    }
    best.map(|b| b.0)
}

/// Runs every variant on one shared partition and writes `speedup.csv` and
/// `comparison.json` into `out_dir`. Each run goes in
/// `out_dir/<config hash>`. The baseline is its method's best grid point.
pub fn run_comparison(plan: &ComparisonPlan, out_dir: &Path) -> Result<ComparisonOutput> {
    let variants = plan.expand()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let prepared = prepare(&variants[0].config)?;
    let mut entries = Vec::new();
    let mut records = Vec::new();
    for v in &variants {
        let mut cfg = v.config.clone();
        cfg.output = out_dir.to_path_buf();
        let out = run_prepared(&cfg, &prepared, &v.label)?;
        entries.push(ComparisonEntry {
            label: v.label.clone(),
            method: v.method.clone(),
            dir: out.dir,
            summary: out.summary,
            best_of_method: false,
        });
        records.push(out.records);
    }
    for m in &plan.methods {
        if let Some(i) = best_variant(&entries, &m.name) {
            entries[i].best_of_method = true;
        }
    }
    let base = best_variant(&entries, &plan.baseline).expect("baseline has a variant");
    let mut rows = Vec::new();
    if !records[base].is_empty() {
        for (e, r) in entries.iter().zip(&records) {
            rows.push(SpeedupRow {
                method: e.label.clone(),
                best_accuracy: e.summary.best_accuracy.unwrap_or(0.0),
                report: speedup(&records[base], r)?,
            });
        }
    }
    write_text(&out_dir.join("speedup.csv"), &speedup_csv(&rows)?)?;
    write_json(&out_dir.join("comparison.json"), &entries)?;
    Ok(ComparisonOutput {
        entries,
        records,
        speedup: rows,
    })
}

// SPDX-License-Identifier: Apache-2.0

//! WebAssembly bindings for the demo page. Every export returns JSON text
//! so the page needs no generated type bindings.

use fedlmd::data::{
    partition_lda, partition_sharding, synth_gaussian_dataset, ClientPartition, Dataset, GaussianSpec, MajorityRule,
    Split,
};
use fedlmd::engine::{EngineConfig, Federation, MaskMode, Schedule, ServerState};
use fedlmd::labels::{Label, LabelSet};
use fedlmd::losses::{
    cross_entropy, fixed_minority_vector, masked_student_dist, masked_teacher_dist, LossKind, LossSpec, TeacherContext,
};
use fedlmd::nn::{softmax_with_temperature, Architecture, Tensor};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_js<T>(r: Res<T>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

fn to_json<T: Serialize>(v: &T) -> Res<String> {
    serde_json::to_string(v).map_err(js_err)
}

fn label_set(classes: usize, one_based: &[u32]) -> Res<LabelSet> {
    let labels = one_based
        .iter()
        .map(|&l| Label::new(l, classes))
        .collect::<Result<Vec<_>, _>>()
        .map_err(js_err)?;
    LabelSet::from_labels(classes, labels).map_err(js_err)
}

fn rule(name: &str) -> Res<MajorityRule> {
    match name {
        "mean" => Ok(MajorityRule::MeanThreshold),
        "sqrt" => Ok(MajorityRule::SqrtThreshold),
        _ => Err(js_err(format!("unknown majority rule {name:?}"))),
    }
}

#[derive(Serialize)]
struct Distributions {
    teacher_full: Vec<f64>,
    teacher_masked: Vec<f64>,
    student_masked: Vec<f64>,
    fixed_minority: Option<Vec<f64>>,
    lmd_kl: f64,
    lmd_tf_kl: Option<f64>,
    ntd_kl: f64,
}

/// Distillation term of `kind` alone: the loss at unit weight minus its
/// cross-entropy part. Clamped at 0, since the subtraction can leave a
/// rounding-sized negative for a zero divergence.
fn distill_term(kind: LossKind, s: &Tensor<f64>, t: &Tensor<f64>, y: Label, majority: &LabelSet, tau: f64) -> Res<f64> {
    let spec = LossSpec {
        kind,
        beta: 1.0,
        tau,
        ..Default::default()
    };
    let total = spec
        .evaluate(s, TeacherContext::GlobalModel(t), &[y], Some(majority))
        .map_err(js_err)?
        .value;
    Ok((total - cross_entropy(s, &[y]).map_err(js_err)?.value).max(0.0))
}

/// The masked teacher and student distributions for one example, with the
/// distillation divergences they produce. `target` and `mask` are 1-based.
#[wasm_bindgen]
pub fn masked_distributions(
    teacher: Vec<f64>,
    student: Vec<f64>,
    target: u32,
    mask: Vec<u32>,
    tau: f64,
) -> Result<String, JsValue> {
    to_js(distributions_json(teacher, student, target, &mask, tau))
}

pub fn distributions_json(teacher: Vec<f64>, student: Vec<f64>, target: u32, mask: &[u32], tau: f64) -> Res<String> {
    let c = teacher.len();
    if student.len() != c || c < 2 {
        return Err(js_err(
            "teacher and student need the same number (at least 2) of logits",
        ));
    }
    let y = Label::new(target, c).map_err(js_err)?;
    let majority = label_set(c, mask)?;
    let t = Tensor::new(vec![1, c], teacher).map_err(js_err)?;
    let s = Tensor::new(vec![1, c], student).map_err(js_err)?;
    let teacher_mask = majority.with(y);
    let full = softmax_with_temperature(&t, tau, None).map_err(js_err)?;
    let student_masked = masked_student_dist(&s, &[y], tau).map_err(js_err)?;
    // A teacher mask covering every label leaves nothing to distill.
    let teacher_masked = if teacher_mask.is_full() {
        vec![0.0; c]
    } else {
        masked_teacher_dist(&t, &teacher_mask, tau).map_err(js_err)?.into_data()
    };
    let fixed_minority = fixed_minority_vector(&majority).ok();
    let lmd_tf_kl = match fixed_minority {
        Some(_) => Some(distill_term(LossKind::LmdTf, &s, &t, y, &majority, tau)?),
        None => None,
    };
    to_json(&Distributions {
        teacher_full: full.into_data(),
        teacher_masked,
        student_masked: student_masked.into_data(),
        fixed_minority,
        lmd_kl: distill_term(LossKind::Lmd, &s, &t, y, &majority, tau)?,
        lmd_tf_kl,
        ntd_kl: distill_term(LossKind::Ntd, &s, &t, y, &majority, tau)?,
    })
}

#[derive(Serialize)]
struct ClientView {
    client: usize,
    size: usize,
    label_counts: Vec<usize>,
    majority: Vec<u32>,
}

fn label_only_dataset(classes: usize, per_class: usize) -> Dataset {
    let labels: Vec<Label> = (0..classes * per_class)
        .map(|i| Label::from_index(i % classes))
        .collect();
    let features = vec![0.0; labels.len()];
    Dataset::new("preview", Split::Train, classes, vec![1], features, labels).expect("consistent")
}

fn view(parts: &[ClientPartition]) -> Vec<ClientView> {
    parts
        .iter()
        .map(|p| ClientView {
            client: p.client,
            size: p.len(),
            label_counts: p.label_counts().to_vec(),
            majority: p.majority().iter().map(Label::get).collect(),
        })
        .collect()
}

/// Partitions a balanced label-only dataset. `strategy` is `lda` (with
/// `param` = alpha) or `sharding` (with `param` = shards per client).
#[wasm_bindgen]
pub fn preview_partition(
    strategy: &str,
    param: f64,
    clients: usize,
    classes: usize,
    per_class: usize,
    seed: u64,
    majority_rule: &str,
) -> Result<String, JsValue> {
    to_js(partition_json(
        strategy,
        param,
        clients,
        classes,
        per_class,
        seed,
        majority_rule,
    ))
}

pub fn partition_json(
    strategy: &str,
    param: f64,
    clients: usize,
    classes: usize,
    per_class: usize,
    seed: u64,
    majority_rule: &str,
) -> Res<String> {
    let ds = label_only_dataset(classes, per_class);
    let r = rule(majority_rule)?;
    let parts = match strategy {
        "lda" => partition_lda(&ds, clients, param, seed, r),
        "sharding" => partition_sharding(&ds, clients, param as usize, seed, r),
        _ => return Err(js_err(format!("unknown strategy {strategy:?}"))),
    }
    .map_err(js_err)?;
    to_json(&view(&parts))
}

#[derive(Serialize)]
struct StepView {
    round: usize,
    accuracy: f64,
    loss_kind: String,
    selected: Vec<usize>,
    prediction_counts: Vec<usize>,
    selected_sample_counts: Vec<usize>,
}

/// A small federation on Gaussian blobs, advanced one round per call.
#[wasm_bindgen]
pub struct Simulator {
    train: Dataset,
    test: Dataset,
    arch: Architecture,
    parts: Vec<ClientPartition>,
    config: EngineConfig,
    state: Option<ServerState>,
}

#[wasm_bindgen]
impl Simulator {
    #[wasm_bindgen(constructor)]
    pub fn new(
        loss: &str,
        beta: f64,
        tau: f64,
        alpha: f64,
        clients: usize,
        per_round: usize,
        seed: u64,
    ) -> Result<Simulator, JsValue> {
        to_js(Simulator::create(loss, beta, tau, alpha, clients, per_round, seed))
    }

    /// Runs one round and returns its record.
    pub fn step(&mut self) -> Result<String, JsValue> {
        to_js(self.step_json())
    }

    /// Label counts and majority sets of the simulated clients.
    pub fn clients(&self) -> Result<String, JsValue> {
        to_js(to_json(&view(&self.parts)))
    }
}

impl Simulator {
    pub fn create(
        loss: &str,
        beta: f64,
        tau: f64,
        alpha: f64,
        clients: usize,
        per_round: usize,
        seed: u64,
    ) -> Res<Simulator> {
        let spec = GaussianSpec {
            classes: 6,
            per_class: 120,
            dim: 8,
            spacing: 2.5,
        };
        let train = synth_gaussian_dataset(&spec, seed, Split::Train);
        let test = synth_gaussian_dataset(
            &GaussianSpec {
                per_class: 50,
                ..spec.clone()
            },
            seed,
            Split::Test,
        );
        let parts = partition_lda(&train, clients, alpha, seed, MajorityRule::MeanThreshold).map_err(js_err)?;
        let config = EngineConfig {
            schedule: Schedule {
                rounds: usize::MAX,
                local_epochs: 2,
                clients_per_round: per_round,
                batch_size: 20,
                lr0: 0.05,
                ..Default::default()
            },
            loss: LossSpec {
                kind: loss.parse::<LossKind>().map_err(js_err)?,
                beta,
                tau,
                ..Default::default()
            },
            mask_mode: MaskMode::Majority,
            seed,
            ..Default::default()
        };
        let arch = Architecture::mlp(spec.dim, &[16], spec.classes);
        let sim = Simulator {
            train,
            test,
            arch,
            parts,
            config,
            state: None,
        };
        Self::federation(&sim.config, &sim.arch, &sim.train, &sim.test, &sim.parts).map_err(js_err)?;
        Ok(sim)
    }

    fn federation<'a>(
        config: &EngineConfig,
        arch: &Architecture,
        train: &'a Dataset,
        test: &'a Dataset,
        parts: &[ClientPartition],
    ) -> fedlmd::Result<Federation<'a>> {
        Federation::new(config.clone(), arch, train, test, parts.to_vec())
    }

    pub fn step_json(&mut self) -> Res<String> {
        let mut fed =
            Self::federation(&self.config, &self.arch, &self.train, &self.test, &self.parts).map_err(js_err)?;
        if let Some(s) = self.state.take() {
            fed = fed.with_state(s).map_err(js_err)?;
        }
        let rec = fed.run_round();
        self.state = Some(fed.into_state());
        let rec = rec.map_err(js_err)?;
        to_json(&StepView {
            round: rec.round,
            accuracy: rec.accuracy,
            loss_kind: rec.loss_kind.to_string(),
            selected: rec.selected,
            prediction_counts: rec.prediction_counts,
            selected_sample_counts: rec.selected_sample_counts,
        })
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Central finite-difference checks of every analytic gradient.
//!
//! Checks run in `f64`. An entry passes when
//! `|analytic - numeric| <= rel_tol * max(|analytic|, |numeric|, floor)`.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::labels::{Label, LabelSet};
use crate::losses::{prox_term, LossKind, LossSpec, TeacherContext};
use crate::nn::{backward, forward, forward_cached, Architecture, ModelWeights, Tensor};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    pub instances: usize,
    /// Parameter entries probed per network instance.
    pub entries_per_instance: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            rel_tol: 1e-3,
            floor: 1e-5,
            instances: 100,
            entries_per_instance: 12,
            seed: 0x6772_6164,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub instances: usize,
    pub entries: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    /// Network draws discarded because a ReLU or max-pool kink sat within
    /// reach of the step.
    pub rejected: usize,
}

impl GradCheckReport {
    fn new(name: impl Into<String>) -> Self {
        GradCheckReport {
            name: name.into(),
            instances: 0,
            entries: 0,
            failures: 0,
            max_rel_err: 0.0,
            rejected: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.entries > 0
    }

    fn record(&mut self, cfg: &GradCheckConfig, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs()).max(cfg.floor);
        let err = (analytic - numeric).abs() / scale;
        self.entries += 1;
        self.max_rel_err = self.max_rel_err.max(err);
        if err.is_nan() || err > cfg.rel_tol {
            self.failures += 1;
        }
    }
}

/// Random logits-level problem shared by the loss checks.
struct LossCase {
    student: Tensor<f64>,
    teacher: Tensor<f64>,
    targets: Vec<Label>,
    mask: LabelSet,
    spec: LossSpec,
}

fn random_mask(rng: &mut StreamRng, classes: usize) -> LabelSet {
    let size = rng.random_range(0..classes);
    let picked = sample(rng, classes, size);
    LabelSet::from_labels(classes, picked.into_iter().map(Label::from_index)).expect("in range")
}

fn random_case(rng: &mut StreamRng, kind: LossKind, classes: usize, batch: usize) -> LossCase {
    let logits = |rng: &mut StreamRng| Tensor::from_fn(vec![batch, classes], |_| rng.random_range(-3.0..3.0));
    let student = logits(rng);
    let teacher = logits(rng);
    let mask = random_mask(rng, classes);
    let targets = (0..batch)
        .map(|_| Label::from_index(rng.random_range(0..classes)))
        .collect();
    let spec = LossSpec {
        kind,
        beta: rng.random_range(0.1..2.0),
        tau: rng.random_range(0.5..5.0),
        smoothing: rng.random_range(0.0..0.5),
        prox_mu: 0.0,
    };
    LossCase {
        student,
        teacher,
        targets,
        mask,
        spec,
    }
}

fn eval_case(case: &LossCase, student: &Tensor<f64>) -> Result<crate::losses::LossOutput> {
    let teacher = if case.spec.kind.needs_teacher_model() {
        TeacherContext::GlobalModel(&case.teacher)
    } else {
        TeacherContext::None
    };
    case.spec.evaluate(student, teacher, &case.targets, Some(&case.mask))
}

/// Checks d loss / d logits for one loss kind.
pub fn check_loss(kind: LossKind, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(kind.name());
    let mut rng = stream(cfg.seed, Purpose::Synth, 100 + kind as u64, 0);
    for _ in 0..cfg.instances {
        let classes = rng.random_range(3..=10);
        let batch = rng.random_range(1..=4);
        let case = random_case(&mut rng, kind, classes, batch);
        let analytic = eval_case(&case, &case.student)?.grad;
        let mut probe = case.student.clone();
        for i in 0..probe.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + cfg.step;
            let up = eval_case(&case, &probe)?.value;
            probe.data_mut()[i] = orig - cfg.step;
            let down = eval_case(&case, &probe)?.value;
            probe.data_mut()[i] = orig;
            report.record(cfg, analytic.data()[i], (up - down) / (2.0 * cfg.step));
        }
        report.instances += 1;
    }
    Ok(report)
}

/// Checks the proximal term's gradient with respect to the local weights.
pub fn check_prox(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new("prox");
    let arch = Architecture::mlp(5, &[4], 3);
    for inst in 0..cfg.instances {
        let mut rng = stream(cfg.seed, Purpose::Synth, 200, inst as u64);
        let local = ModelWeights::<f64>::init(&arch, &mut rng)?;
        let global = ModelWeights::<f64>::init(&arch, &mut rng)?;
        let mu = rng.random_range(0.01..2.0);
        let (_, grad) = prox_term(&local, &global, mu)?;
        let mut probe = local.clone();
        for idx in sample(
            &mut rng,
            probe.num_params(),
            cfg.entries_per_instance.min(probe.num_params()),
        ) {
            let orig = probe.get_flat(idx);
            probe.set_flat(idx, orig + cfg.step);
            let up = prox_term(&probe, &global, mu)?.0;
            probe.set_flat(idx, orig - cfg.step);
            let down = prox_term(&probe, &global, mu)?.0;
            probe.set_flat(idx, orig);
            report.record(cfg, grad.get_flat(idx), (up - down) / (2.0 * cfg.step));
        }
        report.instances += 1;
    }
    Ok(report)
}

/// Small instances of both architectures for network-level checks.
pub fn gradcheck_architectures() -> Vec<Architecture> {
    vec![
        Architecture::mlp(6, &[5, 4], 4),
        Architecture::Cnn2 {
            channels: 2,
            height: 14,
            width: 14,
            conv1: 3,
            conv2: 4,
            kernel: 3,
            fc: 6,
            classes: 4,
        },
    ]
}

/// Checks backward through `arch` with `kind` as the objective, probing a
/// random subset of parameters per instance.
pub fn check_network(arch: &Architecture, kind: LossKind, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let name = format!("{:?}/{}", arch.id(), kind.name()).to_lowercase();
    let mut report = GradCheckReport::new(name);
    let classes = arch.classes();
    let mut draw = 0u64;
    while report.instances < cfg.instances {
        draw += 1;
        let mut rng = stream(cfg.seed, Purpose::Synth, 300 + kind as u64, draw);
        let model = ModelWeights::<f64>::init(arch, &mut rng)?;
        let teacher_model = ModelWeights::<f64>::init(arch, &mut rng)?;
        let batch = rng.random_range(1..=3);
        let x = Tensor::from_fn(vec![batch, arch.input_len()], |_| rng.random_range(-1.0..1.0));
        let mut case = random_case(&mut rng, kind, classes, batch);
        case.teacher = forward(&teacher_model, &x)?;

        let (logits, cache) = forward_cached(&model, &x)?;
        if cache.kink_margin() < 1e-3 {
            report.rejected += 1;
            continue;
        }
        let upstream = eval_case(&case, &logits)?.grad;
        let grads = backward(&model, &cache, &upstream)?;

        let loss_at = |m: &ModelWeights<f64>| -> Result<f64> { Ok(eval_case(&case, &forward(m, &x)?)?.value) };
        let mut probe = model.clone();
        for idx in sample(
            &mut rng,
            probe.num_params(),
            cfg.entries_per_instance.min(probe.num_params()),
        ) {
            let orig = probe.get_flat(idx);
            probe.set_flat(idx, orig + cfg.step);
            let up = loss_at(&probe)?;
            probe.set_flat(idx, orig - cfg.step);
            let down = loss_at(&probe)?;
            probe.set_flat(idx, orig);
            report.record(cfg, grads.get_flat(idx), (up - down) / (2.0 * cfg.step));
        }
        report.instances += 1;
    }
    Ok(report)
}

/// The full suite: every loss, the proximal term, and every
/// architecture/loss pair.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for kind in LossKind::ALL {
        out.push(check_loss(kind, cfg)?);
    }
    out.push(check_prox(cfg)?);
    for arch in gradcheck_architectures() {
        for kind in LossKind::ALL {
            out.push(check_network(&arch, kind, cfg)?);
        }
    }
    Ok(out)
}

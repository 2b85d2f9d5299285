// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::data::{partition_lda, synth_gaussian_dataset, GaussianSpec, MajorityRule, Split};
use crate::losses::TeacherContext;
use crate::nn::{backward, forward_cached, SgdState};
use rand::seq::SliceRandom;

fn synth() -> (Dataset, Dataset) {
    let spec = GaussianSpec {
        classes: 4,
        per_class: 40,
        dim: 6,
        spacing: 2.0,
    };
    (
        synth_gaussian_dataset(&spec, 11, Split::Train),
        synth_gaussian_dataset(&spec, 11, Split::Test),
    )
}

fn arch() -> Architecture {
    Architecture::mlp(6, &[8], 4)
}

fn config(kind: LossKind, rounds: usize, clients_per_round: usize) -> EngineConfig {
    EngineConfig {
        schedule: Schedule {
            rounds,
            local_epochs: 2,
            clients_per_round,
            batch_size: 16,
            lr0: 0.05,
            ..Default::default()
        },
        loss: LossSpec {
            kind,
            beta: 0.5,
            tau: 2.0,
            ..Default::default()
        },
        seed: 5,
        ..Default::default()
    }
}

fn parts(train: &Dataset, clients: usize) -> Vec<ClientPartition> {
    partition_lda(train, clients, 0.3, 8, MajorityRule::MeanThreshold).unwrap()
}

#[test]
fn full_selection_and_determinism() {
    let ids: Vec<usize> = (0..7).collect();
    assert_eq!(select_clients(&ids, 7, 1, 3), ids);
    assert_eq!(select_clients(&ids, 3, 1, 3), select_clients(&ids, 3, 1, 3));
    assert_ne!(
        (0..20).map(|t| select_clients(&ids, 3, 1, t)).collect::<Vec<_>>(),
        (0..20).map(|t| select_clients(&ids, 3, 2, t)).collect::<Vec<_>>()
    );
}

#[test]
fn selection_is_uniform() {
    let (k, per_round, rounds) = (20usize, 5usize, 10_000usize);
    let ids: Vec<usize> = (0..k).collect();
    let mut freq = vec![0usize; k];
    for t in 0..rounds {
        let s = select_clients(&ids, per_round, 42, t);
        assert_eq!(s.len(), per_round);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for c in s {
            freq[c] += 1;
        }
    }
    let p = per_round as f64 / k as f64;
    let mean = rounds as f64 * p;
    let sigma = (rounds as f64 * p * (1.0 - p)).sqrt();
    for f in freq {
        assert!((f as f64 - mean).abs() <= 3.0 * sigma, "{f} vs {mean} +- {sigma}");
    }
}

#[test]
fn lr_follows_decay_exactly() {
    let s = Schedule::default();
    for t in 0..200 {
        assert_eq!(s.lr_at(t), 0.01 * 0.99f64.powi(t as i32));
    }
}

#[test]
fn switch_boundary() {
    for t in 0..10 {
        assert_eq!(
            round_loss_kind(LossKind::Lmd, 4, t),
            if t < 4 { LossKind::LmdTf } else { LossKind::Lmd }
        );
        assert_eq!(round_loss_kind(LossKind::Lmd, 0, t), LossKind::Lmd);
        assert_eq!(round_loss_kind(LossKind::Lmd, 10, t), LossKind::LmdTf);
    }
}

fn task<'a>(
    client: &'a ClientState,
    global: &'a ModelWeights<f32>,
    train: &'a Dataset,
    spec: &'a LossSpec,
    schedule: &'a Schedule,
) -> LocalTask<'a> {
    LocalTask {
        client,
        global,
        train,
        spec,
        schedule,
        lr: 0.05,
        round: 3,
        seed: 9,
        augment: Augment::default(),
    }
}

#[test]
fn zero_epochs_return_broadcast() {
    let (train, _) = synth();
    let p = parts(&train, 4).remove(0);
    let client = ClientState::new(p, MaskMode::Majority);
    let g = ModelWeights::init(&arch(), &mut stream(1, Purpose::Init, 0, 0)).unwrap();
    let sched = Schedule {
        local_epochs: 0,
        ..Default::default()
    };
    let spec = LossSpec::new(LossKind::Lmd);
    let up = local_train(&task(&client, &g, &train, &spec, &sched)).unwrap();
    assert_eq!(up.weights, g);
    assert_eq!(up.teacher_digest, g.digest());
}

#[test]
fn lmd_with_zero_beta_trains_like_ce() {
    let (train, _) = synth();
    let ps = parts(&train, 4);
    let p = ps
        .into_iter()
        .find(|p| !p.is_empty() && !p.majority().is_full())
        .unwrap();
    let client = ClientState::new(p, MaskMode::Majority);
    let g = ModelWeights::init(&arch(), &mut stream(1, Purpose::Init, 0, 0)).unwrap();
    let sched = Schedule {
        local_epochs: 3,
        batch_size: 7,
        ..Default::default()
    };
    let ce = LossSpec::new(LossKind::Ce);
    let lmd = LossSpec {
        beta: 0.0,
        ..LossSpec::new(LossKind::Lmd)
    };
    let a = local_train(&task(&client, &g, &train, &ce, &sched)).unwrap();
    let b = local_train(&task(&client, &g, &train, &lmd, &sched)).unwrap();
    assert_ne!(a.weights, g);
    let bits = |m: &ModelWeights<f32>| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.weights), bits(&b.weights));
}

/// A plain SGD loop over one dataset with the engine's shuffle stream.
fn centralized(train: &Dataset, cfg: &EngineConfig, init: &ModelWeights<f32>) -> Vec<ModelWeights<f32>> {
    let s = &cfg.schedule;
    let mut w = init.clone();
    let mut out = Vec::new();
    for t in 0..s.rounds {
        let mut opt = SgdState::<f32>::new(s.lr_at(t), s.client_momentum, s.weight_decay).unwrap();
        let mut rng = stream(cfg.seed, Purpose::Shuffle, 0, t as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..s.local_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(s.batch_size) {
                let (x, y) = train.batch(chunk);
                let (z, cache) = forward_cached(&w, &x).unwrap();
                let loss = cfg.loss.evaluate(&z.cast(), TeacherContext::None, &y, None).unwrap();
                let g = backward(&w, &cache, &loss.grad.cast()).unwrap();
                opt.step(&mut w, &g).unwrap();
            }
        }
        out.push(w.clone());
    }
    out
}

#[test]
fn single_client_federation_is_centralized_sgd() {
    let (train, test) = synth();
    let cfg = config(LossKind::Ce, 3, 1);
    let whole = ClientPartition::new(0, (0..train.len()).collect(), &train, MajorityRule::MeanThreshold);
    let mut fed = Federation::new(cfg.clone(), &arch(), &train, &test, vec![whole]).unwrap();
    let want = centralized(&train, &cfg, fed.global());
    for w in want {
        fed.run_round().unwrap();
        assert_eq!(fed.global(), &w);
    }
}

#[test]
fn zero_rounds_keep_initialization() {
    let (train, test) = synth();
    let mut fed = Federation::new(config(LossKind::Lmd, 0, 2), &arch(), &train, &test, parts(&train, 4)).unwrap();
    let init = ModelWeights::<f32>::init(&arch(), &mut stream(5, Purpose::Init, 0, 0)).unwrap();
    assert!(fed.run().unwrap().is_empty());
    assert_eq!(fed.global(), &init);
}

fn strip(records: &[RoundRecord]) -> Vec<RoundRecord> {
    records.iter().map(RoundRecord::without_timing).collect()
}

#[test]
fn worker_count_does_not_change_records() {
    let (train, test) = synth();
    let run = |workers| {
        let cfg = EngineConfig {
            workers,
            ..config(LossKind::Lmd, 3, 3)
        };
        let mut fed = Federation::new(cfg, &arch(), &train, &test, parts(&train, 6)).unwrap();
        let recs = fed.run().unwrap();
        (strip(&recs), fed.global().clone())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn records_are_consistent() {
    let (train, test) = synth();
    let mut cfg = config(LossKind::Lmd, 4, 2);
    cfg.schedule.switch_round = 2;
    let mut fed = Federation::new(cfg.clone(), &arch(), &train, &test, parts(&train, 5)).unwrap();
    let recs = fed.run().unwrap();
    assert_eq!(recs.len(), 4);
    for (t, r) in recs.iter().enumerate() {
        assert_eq!(r.round, t);
        assert_eq!(r.lr, cfg.schedule.lr_at(t));
        assert_eq!(r.loss_kind, if t < 2 { LossKind::LmdTf } else { LossKind::Lmd });
        assert_eq!(r.prediction_counts.iter().sum::<usize>(), test.len());
        assert!(r.teacher_digests.iter().all(|&d| d == r.broadcast_digest));
        assert_eq!(r.selected.len(), 2);
        let expect: usize = r.selected.iter().map(|&k| fed.clients()[k].partition.len()).sum();
        assert_eq!(r.selected_sample_counts.iter().sum::<usize>(), expect);
    }
    assert!(fed.is_finished());
}

#[test]
fn empty_clients_are_never_selected() {
    let (train, test) = synth();
    let mut ps = vec![
        ClientPartition::new(0, (0..80).collect(), &train, MajorityRule::MeanThreshold),
        ClientPartition::new(1, vec![], &train, MajorityRule::MeanThreshold),
        ClientPartition::new(2, (80..160).collect(), &train, MajorityRule::MeanThreshold),
    ];
    ps.truncate(3);
    let mut fed = Federation::new(config(LossKind::Ce, 5, 3), &arch(), &train, &test, ps).unwrap();
    for r in fed.run().unwrap() {
        assert_eq!(r.selected, vec![0, 2]);
    }
}

#[test]
fn degenerate_client_falls_back_to_ce() {
    let (train, _) = synth();
    let p = ClientPartition::new(0, (0..train.len()).collect(), &train, MajorityRule::MeanThreshold);
    let c = ClientState::new(p, MaskMode::Present);
    assert!(c.is_degenerate());
    assert_eq!(c.effective_kind(LossKind::Lmd), LossKind::Ce);
    assert_eq!(c.effective_kind(LossKind::Ntd), LossKind::Ntd);
}

#[test]
fn validation_lists_every_problem() {
    let (train, test) = synth();
    let mut cfg = config(LossKind::Ce, 3, 9);
    cfg.schedule.switch_round = 5;
    cfg.loss.tau = 0.0;
    match Federation::new(cfg, &arch(), &train, &test, parts(&train, 4)) {
        Err(Error::Config(v)) => {
            assert!(v.iter().any(|m| m.starts_with("schedule.clients_per_round")));
            assert!(v.iter().filter(|m| m.starts_with("schedule.switch_round")).count() == 2);
            assert!(v.iter().any(|m| m.starts_with("loss.tau")));
        }
        other => panic!("{other:?}", other = other.err()),
    }
}

#[test]
fn resuming_from_state_matches_an_uninterrupted_run() {
    let (train, test) = synth();
    let cfg = config(LossKind::Lmd, 4, 2);
    let mut whole = Federation::new(cfg.clone(), &arch(), &train, &test, parts(&train, 5)).unwrap();
    let want = strip(&whole.run().unwrap());
    let mut state = None;
    let mut got = Vec::new();
    for _ in 0..4 {
        let mut fed = Federation::new(cfg.clone(), &arch(), &train, &test, parts(&train, 5)).unwrap();
        if let Some(s) = state.take() {
            fed = fed.with_state(s).unwrap();
        }
        got.push(fed.run_round().unwrap().without_timing());
        state = Some(fed.into_state());
    }
    assert_eq!(got, want);
    assert_eq!(&state.unwrap().global, whole.global());
}

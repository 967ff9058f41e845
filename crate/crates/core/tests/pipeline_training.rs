mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fogroute::codec::load_image;
use fogroute::hden::FogLevel;
use fogroute::pipeline::{
    infer_batch, load_samples, train, train_samples, Ablation, Sample, TrainConfig, TrainState,
};
use fogroute::unfold::{BranchKind, BranchSet};
use tempfile::TempDir;

fn samples(dir: &Path, scenes: usize, side: usize, seed: u64) -> Vec<Sample> {
    load_samples(&common::dataset(dir, scenes, side, seed)).unwrap()
}

#[test]
fn one_epoch_touches_only_selected_branches() {
    let tmp = TempDir::new().unwrap();
    let all = samples(&tmp.path().join("d"), 10, 32, 21);
    assert_eq!(all.len(), 30);
    let no_heavy: Vec<Sample> = all.iter().filter(|s| s.level != FogLevel::Heavy).cloned().collect();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let initial = BranchSet::default();
    let mut untouched_seen = false;
    for set in [&all, &no_heavy] {
        let run = train_samples(&cfg, set, set).unwrap();
        for kind in BranchKind::ALL {
            let mine: Vec<_> = run.steps.iter().filter(|s| BranchKind::for_level(s.level) == kind).collect();
            let now = run.state.branches.get(kind);
            let before = initial.get(kind);
            if mine.iter().any(|s| s.updated) {
                assert_ne!(now, before, "{kind:?} was updated");
            } else {
                untouched_seen |= mine.is_empty();
                let bits = |b: &fogroute::unfold::BranchParams| {
                    b.learnable().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                };
                assert_eq!(bits(now), bits(before), "{kind:?} must be bit-identical");
                assert_eq!(now, before);
            }
        }
    }
    assert!(untouched_seen, "no branch went unselected");
}

#[test]
fn gamma_follows_the_selected_band() {
    let tmp = TempDir::new().unwrap();
    let set = samples(&tmp.path().join("d"), 4, 32, 22);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let run = train_samples(&cfg, &set, &set).unwrap();
    for epoch in 1..=2 {
        let mut used: Vec<u64> = Vec::new();
        let mut expected: Vec<u64> = Vec::new();
        for s in run.steps.iter().filter(|s| s.epoch == epoch) {
            used.push(s.gamma.to_bits());
            used.push(s.report.gamma.to_bits());
            expected.extend([cfg.gamma_schedule.for_level(s.level).to_bits(); 2]);
            assert!([0.3, 0.6, 0.9].contains(&s.gamma));
        }
        used.sort_unstable();
        expected.sort_unstable();
        assert_eq!(used, expected);
    }
}

#[test]
fn dropped_coherence_is_reported_as_zero() {
    let tmp = TempDir::new().unwrap();
    let set = samples(&tmp.path().join("d"), 3, 32, 23);
    let cfg = TrainConfig {
        epochs: 1,
        ablation: [Ablation::DropCoh].into_iter().collect(),
        ..TrainConfig::default()
    };
    let run = train_samples(&cfg, &set, &set).unwrap();
    assert!(run.steps.iter().all(|s| s.report.coh == 0.0));
    assert!(run.steps.iter().any(|s| s.report.contra_rec > 0.0));
}

#[test]
fn fifty_epochs_beat_one_on_validation() {
    let tmp = TempDir::new().unwrap();
    let tr = samples(&tmp.path().join("tr"), 3, 32, 24);
    let va = samples(&tmp.path().join("va"), 3, 32, 25);
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let run = train_samples(&cfg, &tr, &va).unwrap();
    let h = &run.state.loss_history;
    assert_eq!(h.len(), 50);
    assert_eq!(run.state.epoch, 50);
    assert!(h[49].val_total < h[0].val_total, "{} vs {}", h[49].val_total, h[0].val_total);
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn inference_outputs_routing_and_reruns() {
    let tmp = TempDir::new().unwrap();
    let tr = common::dataset(&tmp.path().join("tr"), 8, 32, 26);
    let va = common::dataset(&tmp.path().join("va"), 8, 32, 27);
    let run = train(&TrainConfig { epochs: 1, ..TrainConfig::default() }, &tr, &va).unwrap();
    let state_dir = tmp.path().join("state");
    run.state.save_dir(&state_dir).unwrap();
    let state = TrainState::load_dir(&state_dir).unwrap();
    assert_eq!(state, run.state);

    let out = tmp.path().join("out");
    let rep = infer_batch(&va, &state, &out, None).unwrap();
    for e in &va.entries {
        let img = load_image(out.join(format!("{}.png", e.image_id()))).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
    }
    let mut routed = [0usize; 3];
    for r in &rep.routes {
        routed[r.level.index()] += 1;
    }
    let n = rep.routes.len() as f64;
    assert!(routed.iter().all(|&c| c as f64 >= 0.25 * n), "routing {routed:?}");

    let first = dir_bytes(&out);
    assert!(first.contains_key("metrics.csv") && first.contains_key("routing.csv"));
    fs::remove_dir_all(&out).unwrap();
    infer_batch(&va, &state, &out, None).unwrap();
    assert_eq!(first, dir_bytes(&out));
}

#[test]
fn forced_inference_uses_one_branch() {
    let tmp = TempDir::new().unwrap();
    let va = common::dataset(&tmp.path().join("va"), 3, 32, 28);
    let state = TrainState {
        hden: fogroute::hden::HdenParams::zeros(),
        branches: BranchSet::default(),
        thresholds: Default::default(),
        epoch: 0,
        loss_history: Vec::new(),
    };
    let rep = infer_batch(&va, &state, tmp.path().join("o"), Some(FogLevel::Heavy)).unwrap();
    assert!(rep.routes.iter().all(|r| r.stages == 6 && r.level == FogLevel::Heavy));
}

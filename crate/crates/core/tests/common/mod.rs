#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posthoc::eval::{Evaluator, LinearEvaluator, SplitData};
use posthoc::store::{CheckpointIndex, CheckpointTensors, EvalTable, RunStore};

pub const DIM: usize = 3;
pub const CLASSES: usize = 3;

fn split(rng: &mut ChaCha8Rng, n: usize) -> SplitData {
    let x: Vec<f64> = (0..n * DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x
        .chunks(DIM)
        .map(|row| {
            if rng.random_bool(0.7) {
                posthoc::metrics::argmax(row) as u32
            } else {
                rng.random_range(0..CLASSES as u32)
            }
        })
        .collect();
    SplitData::new(DIM, x, y).unwrap()
}

pub fn evaluator(seed: u64, n: usize) -> LinearEvaluator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let val = split(&mut rng, n);
    let test = split(&mut rng, n);
    LinearEvaluator { splits: BTreeMap::from([("val".into(), val), ("test".into(), test)]) }
}

/// Weights drifting from noise towards a scaled identity as `step` grows.
pub fn trajectory(seed: u64, steps: usize) -> Vec<CheckpointTensors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|s| {
            let g = 0.5 + s as f64 * 0.4;
            let w = (0..CLASSES * DIM)
                .map(|i| if i / DIM == i % DIM { g } else { 0.0 } + rng.random_range(-1.0..1.0))
                .collect();
            let b = (0..CLASSES).map(|_| rng.random_range(-0.3..0.3)).collect();
            LinearEvaluator::checkpoint(w, b, DIM).unwrap()
        })
        .collect()
}

pub fn tables(ev: &LinearEvaluator, ck: &CheckpointTensors) -> BTreeMap<String, EvalTable> {
    ["val", "test"].iter().map(|s| (s.to_string(), ev.evaluate(ck, s).unwrap())).collect()
}

/// `runs` runs of `steps` checkpoints at indices 1..=steps, with val and test tables.
pub fn linear_store(seed: u64, runs: usize, steps: usize) -> (RunStore, LinearEvaluator) {
    let ev = evaluator(seed, 60);
    let mut store = RunStore::new();
    for r in 1..=runs as u32 {
        for (i, ck) in trajectory(seed * 1000 + r as u64, steps).into_iter().enumerate() {
            let t = tables(&ev, &ck);
            store.insert(CheckpointIndex { run: r, index: (i + 1) as f64 }, Some(ck), t).unwrap();
        }
    }
    (store, ev)
}

/// Store with the same trajectory copied into every run.
pub fn duplicated_store(seed: u64, runs: usize, steps: usize) -> (RunStore, LinearEvaluator) {
    let ev = evaluator(seed, 60);
    let traj = trajectory(seed, steps);
    let mut store = RunStore::new();
    for r in 1..=runs as u32 {
        for (i, ck) in traj.iter().enumerate() {
            store.insert(CheckpointIndex { run: r, index: (i + 1) as f64 }, Some(ck.clone()), tables(&ev, ck)).unwrap();
        }
    }
    (store, ev)
}

/// Like [`trajectory`], but the noise is drawn once, so checkpoints only differ
/// by the growing identity component.
pub fn smooth_trajectory(seed: u64, steps: usize) -> Vec<CheckpointTensors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..CLASSES * DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..CLASSES).map(|_| rng.random_range(-0.3..0.3)).collect();
    (0..steps)
        .map(|s| {
            let g = 0.2 + s as f64 * 0.3;
            let w = noise.iter().enumerate().map(|(i, n)| if i / DIM == i % DIM { g + n } else { *n }).collect();
            LinearEvaluator::checkpoint(w, b.clone(), DIM).unwrap()
        })
        .collect()
}

/// `runs` copies of one smooth trajectory.
pub fn smooth_duplicated_store(seed: u64, runs: usize, steps: usize) -> (RunStore, LinearEvaluator) {
    let ev = evaluator(seed, 60);
    let traj = smooth_trajectory(seed, steps);
    let mut store = RunStore::new();
    for r in 1..=runs as u32 {
        for (i, ck) in traj.iter().enumerate() {
            store.insert(CheckpointIndex { run: r, index: (i + 1) as f64 }, Some(ck.clone()), tables(&ev, ck)).unwrap();
        }
    }
    (store, ev)
}

/// Copy of `store` whose entries also carry `swa-val` and `swa-test` tables,
/// so it can be analysed without an evaluator.
pub fn with_swa_tables(store: &RunStore, ev: &LinearEvaluator) -> RunStore {
    let mut out = RunStore::new();
    for r in store.run_ids() {
        let run = store.run(r).unwrap();
        let cks = run.checkpoints(r).unwrap();
        for (i, e) in run.entries().iter().enumerate() {
            let avg = posthoc::transforms::swa_mean(&cks[..=i]).unwrap();
            let mut t = e.tables.clone();
            for (k, v) in tables(ev, &avg) {
                t.insert(format!("swa-{k}"), v);
            }
            out.insert(CheckpointIndex { run: r, index: e.index }, e.checkpoint.clone(), t).unwrap();
        }
    }
    out
}

//! Logit ensembles, weight averaging and the composed SWA+TS and SWA+Ens+TS
//! transforms on a linear model, where averaging weights and averaging logits agree.
//!
//! Run with: cargo run --example ensemble_and_swa

use std::collections::BTreeMap;

use posthoc::calibrate::FitOptions;
use posthoc::eval::{Evaluator, LinearEvaluator, SplitData};
use posthoc::metrics::{error_metric, loss_metric};
use posthoc::store::{CheckpointTensors, EvalTable};
use posthoc::transforms::{compose_swa_ens_ts, compose_swa_ts, ensemble_logits, swa_mean, SwaState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 4;
const CLASSES: usize = 3;

fn split(rng: &mut ChaCha8Rng, n: usize) -> SplitData {
    let x: Vec<f64> = (0..n * DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x
        .chunks(DIM)
        .map(|r| if rng.random_bool(0.8) { posthoc::metrics::argmax(&r[..CLASSES]) as u32 } else { rng.random_range(0..3) })
        .collect();
    SplitData::new(DIM, x, y).unwrap()
}

fn noisy_checkpoint(rng: &mut ChaCha8Rng) -> CheckpointTensors {
    let w = (0..CLASSES * DIM)
        .map(|i| if i / DIM == i % DIM { 3.0 } else { 0.0 } + rng.random_range(-2.0..2.0))
        .collect();
    let b = (0..CLASSES).map(|_| rng.random_range(-0.5..0.5)).collect();
    LinearEvaluator::checkpoint(w, b, DIM).unwrap()
}

fn describe(name: &str, t: &EvalTable) {
    println!("{name:<22} error {:.4}  loss {:.4}", error_metric(t).value, loss_metric(t).value);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ev = LinearEvaluator {
        splits: BTreeMap::from([("val".into(), split(&mut rng, 500)), ("test".into(), split(&mut rng, 500))]),
    };
    let runs: Vec<Vec<CheckpointTensors>> = (0..4).map(|_| (0..6).map(|_| noisy_checkpoint(&mut rng)).collect()).collect();

    let last = &runs[0][5];
    describe("single checkpoint", &ev.evaluate(last, "test").unwrap());

    let members: Vec<EvalTable> = runs.iter().map(|r| ev.evaluate(&r[5], "test").unwrap()).collect();
    let refs: Vec<&EvalTable> = members.iter().collect();
    describe("ensemble of 4 runs", &ensemble_logits(&refs, &[1.0; 4]).unwrap());

    let mut state = SwaState::new();
    for ck in &runs[0] {
        state.absorb(ck).unwrap();
    }
    let swa = ev.evaluate(state.mean().unwrap(), "test").unwrap();
    describe("SWA of run 1", &swa);
    let batch = swa_mean(&runs[0].iter().collect::<Vec<_>>()).unwrap();
    let per_ckpt: Vec<EvalTable> = runs[0].iter().map(|c| ev.evaluate(c, "test").unwrap()).collect();
    let logit_mean = ensemble_logits(&per_ckpt.iter().collect::<Vec<_>>(), &[1.0; 6]).unwrap();
    let gap = swa.logits().iter().zip(logit_mean.logits()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let drift = state
        .mean()
        .unwrap()
        .tensors()
        .iter()
        .zip(batch.tensors())
        .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("  streaming vs batch mean max gap {drift:.1e}, weight mean vs logit mean max gap {gap:.1e}");

    let opts = FitOptions::default();
    let prefix: Vec<&CheckpointTensors> = runs[0].iter().collect();
    let swa_ts = compose_swa_ts(&prefix, &ev, &opts).unwrap();
    describe("SWA+TS", &swa_ts.test);
    println!("  tau = {:.4}", swa_ts.spec.member_temps[0]);

    let prefixes: Vec<Vec<&CheckpointTensors>> = runs.iter().map(|r| r.iter().collect()).collect();
    let full = compose_swa_ens_ts(&prefixes, &ev, &opts).unwrap();
    describe("SWA+Ens+TS", &full.test);
    println!("  member taus {:?}, ensemble tau {:.4}", full.spec.member_temps.iter().map(|t| (t * 1e4).round() / 1e4).collect::<Vec<_>>(), full.spec.ensemble_temp.unwrap());
}

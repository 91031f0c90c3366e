//! Train an ensemble of MLPs on noisy spirals and look for post-hoc reversal
//! between the mean test error of single models and the ensemble test error.
//!
//! Run with: cargo run --release --example spirals_reversal [hidden] [models] [seed]

use posthoc::calibrate::FitOptions;
use posthoc::diagnostics::{curves, detect_reversal};
use posthoc::metrics::{clean_error_metric, MetricKind};
use posthoc::synth::{run_ensemble_experiment_with, ExperimentOptions, MlpConfig, SynthData};
use posthoc::transforms::{PosthocContext, TransformKind};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let hidden = args.first().copied().unwrap_or(128);
    let models = args.get(1).copied().unwrap_or(16);
    let seed = args.get(2).copied().unwrap_or(1) as u64;

    let data = SynthData::standard(seed).expect("data");
    let cfg = MlpConfig { hidden, ..MlpConfig::standard(seed) };
    let start = std::time::Instant::now();
    let exp = run_ensemble_experiment_with(&data, &cfg, &ExperimentOptions { n_models: models, keep_checkpoints: false })
        .expect("training");
    println!("trained {models} x 4x{hidden} MLPs in {:.1?}", start.elapsed());

    let ctx = PosthocContext::new(&exp.store, None, FitOptions::default());
    let runs = exp.store.run_ids();
    let pair = curves(&ctx, TransformKind::Ens, &runs, "test", MetricKind::Error).unwrap();
    let swa = curves(&ctx, TransformKind::SwaEnsTs, &runs, "test", MetricKind::Error).unwrap();
    println!("{:>6} {:>10} {:>10} {:>12}", "epoch", "mean base", "ensemble", "SWA+Ens+TS");
    for (i, idx) in pair.indices.iter().enumerate().filter(|(i, _)| i % 10 == 9) {
        println!("{idx:>6} {:>10.4} {:>10.4} {:>12.4}", pair.base[i], pair.post[i], swa.post[i]);
    }
    let rep = detect_reversal(&pair).unwrap();
    let forward = rep.witnesses.iter().filter(|(s, t)| s < t).count();
    println!("reversal: {} ({} witnesses, {forward} with s < t)", rep.reversed, rep.count);
    if let Some((s, t)) = rep.witnesses.iter().filter(|(s, t)| s < t).max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0))) {
        println!("widest: base improves from epoch {s} to {t} while the ensemble gets worse");
    }

    let last = exp.store.run(1).unwrap().entries().last().unwrap();
    let noisy = posthoc::metrics::error_metric(&last.tables["test"]).value;
    let clean = clean_error_metric(&last.tables["test"], &data.test.clean_labels).unwrap().value;
    println!("run 1 final test error: {noisy:.4} on noisy labels, {clean:.4} on clean labels");
}

//! Compare naive, post-hoc and hybrid checkpoint selection on a small
//! synthetic ensemble.
//!
//! Run with: cargo run --release --example checkpoint_selection

use posthoc::calibrate::FitOptions;
use posthoc::metrics::MetricKind;
use posthoc::selection::{
    hybrid_select, naive_swa_ens_ts, naive_swa_ts, posthoc_select_swa_ens_ts, posthoc_select_swa_ts, SelectionReport,
};
use posthoc::synth::{run_ensemble_experiment_with, ExperimentOptions, MlpConfig, SynthData};
use posthoc::transforms::PosthocContext;

fn row(name: &str, r: &SelectionReport) {
    let idx: Vec<String> = r.chosen.iter().map(|c| format!("{}", c.index)).collect();
    let test = r.test.expect("test split present");
    println!(
        "{name:<26} val {:.4}  test error {:.4}  test loss {:.4}  epochs [{}]",
        r.val_metric.value,
        test.error,
        test.loss,
        idx.join(",")
    );
}

fn main() {
    let data = SynthData::standard(3).expect("data");
    let cfg = MlpConfig::desk(3);
    let opts = ExperimentOptions { n_models: 4, keep_checkpoints: false };
    let exp = run_ensemble_experiment_with(&data, &cfg, &opts).expect("training");
    let ctx = PosthocContext::new(&exp.store, None, FitOptions::default());
    let runs = exp.store.run_ids();

    for metric in [MetricKind::Loss, MetricKind::Error] {
        println!("-- selecting on validation {metric}");
        row("naive, run 1, SWA+TS", &naive_swa_ts(&ctx, 1, metric).unwrap());
        row("post-hoc, run 1, SWA+TS", &posthoc_select_swa_ts(&ctx, 1, metric).unwrap());
        row("naive SWA+Ens+TS", &naive_swa_ens_ts(&ctx, &runs, metric).unwrap());
        row("post-hoc SWA+Ens+TS", &posthoc_select_swa_ens_ts(&ctx, &runs, metric).unwrap());
        row("hybrid", &hybrid_select(&ctx, &runs, metric).unwrap());
    }
}

//! Early stopping on the temperature-scaled weight average instead of the raw
//! checkpoint, fed one checkpoint at a time during training.
//!
//! Run with: cargo run --release --example early_stopping_monitor

use ndarray::ArrayView2;
use posthoc::calibrate::FitOptions;
use posthoc::metrics::{loss_metric, MetricKind};
use posthoc::selection::{monitor_step, Decision, MonitorConfig, MonitorState};
use posthoc::synth::rng::stream;
use posthoc::synth::{Mlp, MlpEvaluator, SynthData};
use posthoc::eval::Evaluator;
use rand::seq::SliceRandom;

fn main() {
    let data = SynthData::standard(5).expect("data");
    let ev = MlpEvaluator::new(&data);
    let mut net = Mlp::init(&[2, 128, 128, 128, 2], &mut stream(5, 1, "init"));
    let mut rng = stream(5, 1, "batches");
    let x = ArrayView2::from_shape((data.train.len(), 2), data.train.points.as_flattened()).unwrap();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let cfg = MonitorConfig { patience: 8, min_delta: 1e-4, metric: MetricKind::Loss };
    let mut monitor = MonitorState::new(cfg);
    for epoch in 1..=1000 {
        order.shuffle(&mut rng);
        for chunk in order.chunks(64) {
            let xb = ndarray::Array2::from_shape_fn((chunk.len(), 2), |(r, c)| x[[chunk[r], c]]);
            let yb: Vec<u32> = chunk.iter().map(|&i| data.train.labels[i]).collect();
            let (_, g) = net.loss_and_grad(xb.view(), &yb);
            net.sgd_step(&g, 0.05);
        }
        if epoch % 10 != 0 {
            continue;
        }
        let ck = net.to_checkpoint();
        let raw = loss_metric(&ev.evaluate(&ck, "val").unwrap()).value;
        let decision = monitor_step(&mut monitor, epoch as f64, &ck, &ev, &FitOptions::default()).unwrap();
        if epoch % 50 == 0 {
            println!(
                "epoch {epoch:>4}: raw val loss {raw:.4}, best SWA+TS val loss {:.4} at epoch {}, {} checks without improvement",
                monitor.best_val,
                monitor.best_index.unwrap_or(0.0),
                monitor.since_best
            );
        }
        if decision == Decision::Stop {
            println!("stopping at epoch {epoch}, keeping the SWA+TS model ending at epoch {}", monitor.best_index.unwrap_or(0.0));
            break;
        }
    }
}

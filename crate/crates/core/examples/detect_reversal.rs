//! Find post-hoc reversal witnesses between a base curve and a transformed curve.
//!
//! Run with: cargo run --example detect_reversal

use posthoc::diagnostics::{detect_reversal, CurvePair};
use posthoc::metrics::MetricKind;
use posthoc::transforms::TransformKind;

fn show(label: &str, base: &[f64], post: &[f64]) {
    let indices: Vec<f64> = (1..=base.len()).map(|i| i as f64 * 100.0).collect();
    let pair = CurvePair::new(indices, base.to_vec(), post.to_vec(), MetricKind::Error, TransformKind::SwaEnsTs)
        .expect("well formed curves");
    let rep = detect_reversal(&pair).expect("at least two points");
    println!("{label}: reversed = {}, {} witness pairs", rep.reversed, rep.count);
    for (s, t) in rep.witnesses.iter().filter(|(s, t)| s < t).take(5) {
        println!("  base prefers epoch {t} over {s}, the transform prefers {s}");
    }
}

fn main() {
    // Base test error keeps improving while the ensemble gets worse: a reversal.
    show("memorization phase", &[0.40, 0.33, 0.30, 0.29, 0.285], &[0.30, 0.24, 0.25, 0.27, 0.28]);
    // Same ordering on both curves: nothing to report.
    show("co-monotone", &[0.5, 0.4, 0.3], &[0.4, 0.3, 0.2]);
    // Ties on the base side still count.
    show("flat base", &[0.3, 0.3], &[0.25, 0.2]);
}

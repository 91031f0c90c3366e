//! Fit a temperature on a validation table and apply it to a test table.
//!
//! Run with: cargo run --example calibrate_temperature

use posthoc::calibrate::{apply_temperature, fit_temperature, FitOptions};
use posthoc::metrics::{error_metric, loss_metric};
use posthoc::store::EvalTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An overconfident classifier: labels follow softmax(z / 3) but the logits are `z`.
fn overconfident(rng: &mut ChaCha8Rng, n: usize) -> EvalTable {
    let c = 4;
    let mut logits = Vec::with_capacity(n * c);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
        let p: Vec<f64> = z.iter().map(|v| (v / 3.0).exp()).collect();
        let mut u = rng.random_range(0.0..p.iter().sum::<f64>());
        let y = p.iter().position(|&w| {
            u -= w;
            u < 0.0
        });
        labels.push(y.unwrap_or(c - 1) as u32);
        logits.extend(z);
    }
    EvalTable::new(c, logits, labels).expect("valid table")
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let val = overconfident(&mut rng, 2000);
    let test = overconfident(&mut rng, 2000);

    let fit = fit_temperature(&val, &FitOptions::default()).expect("fit");
    println!("fitted tau = {:.4} ({:?}, {} Newton steps)", fit.tau, fit.status, fit.iterations);
    println!("val loss   {:.4} -> {:.4}", fit.val_loss_before, fit.val_loss_after);

    let scaled = apply_temperature(&test, fit.tau).expect("tau > 0");
    println!("test loss  {:.4} -> {:.4}", loss_metric(&test).value, loss_metric(&scaled).value);
    println!("test error {:.4} -> {:.4} (unchanged by scaling)", error_metric(&test).value, error_metric(&scaled).value);

    let toy = EvalTable::from_rows(&[vec![2.0, 0.0], vec![2.0, 0.0], vec![2.0, 0.0]], vec![0, 0, 1]).unwrap();
    let fit = fit_temperature(&toy, &FitOptions::default()).unwrap();
    println!("three-row toy table: tau = {:.6}, 2 / ln 2 = {:.6}", fit.tau, 2.0 / 2f64.ln());
}

//! Render the decision surfaces of two spiral classifiers and their ensemble as PGM images.
//!
//! Run with: cargo run --release --example decision_surface [out_dir]

use ndarray::{Array2, ArrayView2};
use posthoc::metrics::argmax;
use posthoc::synth::{mlp_train, render_decision_surface_batch, Bounds, Mlp, MlpConfig, SynthData};

fn logits(net: &Mlp, pts: &[[f64; 2]]) -> Array2<f64> {
    net.forward(ArrayView2::from_shape((pts.len(), 2), pts.as_flattened()).unwrap())
}

fn classes(z: &Array2<f64>) -> Vec<u32> {
    z.rows().into_iter().map(|r| argmax(r.as_slice().unwrap()) as u32).collect()
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "surfaces".into());
    std::fs::create_dir_all(&out).unwrap();
    let data = SynthData::standard(2).unwrap();
    let cfg = MlpConfig { hidden: 64, epochs: 300, checkpoint_interval: 300.0, ..MlpConfig::standard(2) };
    let nets: Vec<Mlp> = (1..=2)
        .map(|run| {
            let t = mlp_train(&data, &cfg, run, false).unwrap();
            Mlp::from_checkpoint(t.checkpoints.last().unwrap().as_ref().unwrap()).unwrap()
        })
        .collect();

    let bounds = Bounds::square(1.25);
    for (i, net) in nets.iter().enumerate() {
        let grid = render_decision_surface_batch(|p| Ok(classes(&logits(net, p))), bounds, 200, 2).unwrap();
        let path = format!("{out}/model-{}.pgm", i + 1);
        std::fs::write(&path, grid.to_pgm()).unwrap();
        println!("wrote {path}");
    }
    let ens = render_decision_surface_batch(
        |p| Ok(classes(&(logits(&nets[0], p) + logits(&nets[1], p)))),
        bounds,
        200,
        2,
    )
    .unwrap();
    std::fs::write(format!("{out}/ensemble.pgm"), ens.to_pgm()).unwrap();
    let agree = nets.iter().map(|n| {
        let g = render_decision_surface_batch(|p| Ok(classes(&logits(n, p))), bounds, 200, 2).unwrap();
        g.cells.iter().zip(&ens.cells).filter(|(a, b)| a == b).count() as f64 / g.cells.len() as f64
    });
    for (i, a) in agree.enumerate() {
        println!("model {} agrees with the ensemble on {:.1}% of the window", i + 1, 100.0 * a);
    }
}

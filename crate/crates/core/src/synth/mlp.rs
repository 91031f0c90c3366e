//! Fully connected rectifier network with hand-written backpropagation.
//!
//! Layer `l` (1-based) stores `W{l}` with shape `[fan_in, fan_out]` and
//! `b{l}` with shape `[fan_out]`; hidden layers apply `max(0, x W + b)`,
//! the last layer is affine and produces logits.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::log_sum_exp;
use crate::store::{CheckpointTensors, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Gradients with the same layout as [`Mlp::layers`].
pub type Grads = Vec<Layer>;

impl Mlp {
    /// `widths` lists every layer width including input and output, e.g. `[2, 512, 512, 512, 2]`.
    /// Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.nrows()];
        w.extend(self.layers.iter().map(|l| l.w.ncols()));
        w
    }

    pub fn from_checkpoint(ck: &CheckpointTensors) -> Result<Self> {
        let depth = ck.tensors().len() / 2;
        if depth == 0 || ck.tensors().len() != 2 * depth {
            return Err(Error::validation("MLP checkpoint needs W1..Wd and b1..bd"));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 1..=depth {
            let (w, b) = match (ck.get(&format!("W{l}")), ck.get(&format!("b{l}"))) {
                (Some(w), Some(b)) => (w, b),
                _ => return Err(Error::validation(format!("MLP checkpoint lacks W{l} or b{l}"))),
            };
            if w.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != w.shape[1] {
                return Err(Error::validation(format!("layer {l} has inconsistent shapes")));
            }
            let (fi, fo) = (w.shape[0] as usize, w.shape[1] as usize);
            if let Some(prev) = layers.last().map(|p: &Layer| p.w.ncols()) {
                if prev != fi {
                    return Err(Error::validation(format!("layer {l} expects {fi} inputs, previous layer gives {prev}")));
                }
            }
            layers.push(Layer {
                w: Array2::from_shape_vec((fi, fo), w.data.clone()).expect("shape checked"),
                b: Array1::from_vec(b.data.clone()),
            });
        }
        Ok(Mlp { layers })
    }

    pub fn to_checkpoint(&self) -> CheckpointTensors {
        let mut tensors = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (fi, fo) = l.w.dim();
            tensors.push(Tensor::new(format!("W{}", i + 1), vec![fi as u32, fo as u32], l.w.iter().copied().collect()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            tensors.push(Tensor::new(format!("b{}", i + 1), vec![l.b.len() as u32], l.b.to_vec()));
        }
        CheckpointTensors::new(tensors).expect("MLP tensors are well formed")
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, y: &[u32]) -> (f64, Grads) {
        let last = self.layers.len() - 1;
        // Post-activation outputs; acts[0] is the input.
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w) + &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let batch = y.len() as f64;
        let logits = acts.pop().expect("output layer");
        let mut delta = logits;
        let mut loss = 0.0;
        for (mut row, &label) in delta.axis_iter_mut(Axis(0)).zip(y) {
            let lse = log_sum_exp(row.as_slice().expect("row-major"));
            loss += lse - row[label as usize];
            row.mapv_inplace(|v| (v - lse).exp());
            row[label as usize] -= 1.0;
        }
        delta /= batch;

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].w.t());
                // acts[i] is the rectified output of layer i-1; its zeros mark inactive units.
                ndarray::Zip::from(&mut back).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss / batch, grads)
    }

    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.w.scaled_add(-lr, &g.w);
            l.b.scaled_add(-lr, &g.b);
        }
    }
}

/// Logits of the network stored in `ck` on row-major 2-D inputs.
pub fn mlp_forward(ck: &CheckpointTensors, inputs: &[[f64; 2]]) -> Result<Array2<f64>> {
    let net = Mlp::from_checkpoint(ck)?;
    if net.layers[0].w.nrows() != 2 {
        return Err(Error::validation("MLP input layer must take 2 features"));
    }
    let x = ArrayView2::from_shape((inputs.len(), 2), inputs.as_flattened()).expect("n x 2");
    Ok(net.forward(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_zero_logits() {
        let mut net = Mlp::init(&[2, 4, 4, 2], &mut ChaCha8Rng::seed_from_u64(0));
        for l in &mut net.layers {
            l.w.fill(0.0);
        }
        let out = mlp_forward(&net.to_checkpoint(), &[[0.3, -1.0], [2.0, 5.0]]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_toy_network() {
        // 2-2-2: hidden = relu(x W1 + b1), logits = hidden W2 + b2.
        let net = Mlp {
            layers: vec![
                Layer { w: array![[1.0, -1.0], [2.0, 0.5]], b: array![0.0, 0.1] },
                Layer { w: array![[1.0, 0.0], [0.0, 3.0]], b: array![0.5, -0.5] },
            ],
        };
        // x = (1, 1): pre = (3, -0.4) -> relu (3, 0) -> logits (3.5, -0.5)
        let out = mlp_forward(&net.to_checkpoint(), &[[1.0, 1.0]]).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![3.5, -0.5]);
    }

    #[test]
    fn last_layer_is_positively_homogeneous() {
        let net = Mlp::init(&[2, 8, 8, 2], &mut ChaCha8Rng::seed_from_u64(1));
        let mut doubled = net.clone();
        let last = doubled.layers.last_mut().unwrap();
        last.w *= 2.0;
        last.b *= 2.0;
        let x = [[0.1, 0.2], [-0.5, 0.9], [1.0, -1.0]];
        let a = mlp_forward(&net.to_checkpoint(), &x).unwrap();
        let b = mlp_forward(&doubled.to_checkpoint(), &x).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_schema_errors() {
        let net = Mlp::init(&[2, 3, 2], &mut ChaCha8Rng::seed_from_u64(2));
        let ck = net.to_checkpoint();
        assert_eq!(Mlp::from_checkpoint(&ck).unwrap(), net);
        let bad = CheckpointTensors::new(vec![Tensor::new("W1", vec![2, 3], vec![0.0; 6])]).unwrap();
        assert!(Mlp::from_checkpoint(&bad).is_err());
        let mismatched = CheckpointTensors::new(vec![
            Tensor::new("W1", vec![2, 3], vec![0.0; 6]),
            Tensor::new("W2", vec![4, 2], vec![0.0; 8]),
            Tensor::new("b1", vec![3], vec![0.0; 3]),
            Tensor::new("b2", vec![2], vec![0.0; 2]),
        ])
        .unwrap();
        assert!(Mlp::from_checkpoint(&mismatched).is_err());
    }

    fn batch_loss(net: &Mlp, x: ArrayView2<'_, f64>, y: &[u32]) -> f64 {
        let logits = net.forward(x);
        logits
            .axis_iter(Axis(0))
            .zip(y)
            .map(|(r, &l)| log_sum_exp(r.as_slice().unwrap()) - r[l as usize])
            .sum::<f64>()
            / y.len() as f64
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let net = Mlp::init(&[2, 8, 8, 2], &mut rng);
            let x = Array2::from_shape_fn((16, 2), |_| rng.random_range(-1.0..1.0));
            let y: Vec<u32> = (0..16).map(|_| rng.random_range(0..2)).collect();
            let (_, grads) = net.loss_and_grad(x.view(), &y);
            for _ in 0..10 {
                let l = rng.random_range(0..net.layers.len());
                let (r, c) = net.layers[l].w.dim();
                let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
                let h = 1e-6;
                let mut plus = net.clone();
                plus.layers[l].w[[i, j]] += h;
                let mut minus = net.clone();
                minus.layers[l].w[[i, j]] -= h;
                let fd = (batch_loss(&plus, x.view(), &y) - batch_loss(&minus, x.view(), &y)) / (2.0 * h);
                let an = grads[l].w[[i, j]];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "fd {fd} vs {an}");
            }
        }
    }
}

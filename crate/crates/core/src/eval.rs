//! Evaluators turn a weight checkpoint into logits on a named split.
//!
//! SWA needs logits of an averaged model, which cannot be derived from the
//! member logits of a nonlinear model, so the engine calls back into an
//! [`Evaluator`]. Models with normalization layers must recompute their
//! statistics inside `evaluate`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::store::{CheckpointTensors, EvalTable, Tensor};

pub trait Evaluator {
    fn evaluate(&self, checkpoint: &CheckpointTensors, split: &str) -> Result<EvalTable>;
}

impl<F> Evaluator for F
where
    F: Fn(&CheckpointTensors, &str) -> Result<EvalTable>,
{
    fn evaluate(&self, checkpoint: &CheckpointTensors, split: &str) -> Result<EvalTable> {
        self(checkpoint, split)
    }
}

/// Inputs and labels of one split, row-major `n x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<u32>,
}

impl SplitData {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::validation("split inputs do not match dim x label count"));
        }
        Ok(SplitData { dim, inputs, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

/// `f(x; W, b) = W x + b` with tensors `weight` (`[classes, dim]`) and `bias` (`[classes]`).
#[derive(Debug, Clone)]
pub struct LinearEvaluator {
    pub splits: BTreeMap<String, SplitData>,
}

impl LinearEvaluator {
    pub fn checkpoint(weight: Vec<f64>, bias: Vec<f64>, dim: usize) -> Result<CheckpointTensors> {
        let classes = bias.len() as u32;
        CheckpointTensors::new(vec![
            Tensor::new("weight", vec![classes, dim as u32], weight),
            Tensor::new("bias", vec![classes], bias),
        ])
    }
}

impl Evaluator for LinearEvaluator {
    fn evaluate(&self, checkpoint: &CheckpointTensors, split: &str) -> Result<EvalTable> {
        let data = self
            .splits
            .get(split)
            .ok_or_else(|| Error::validation(format!("linear evaluator has no split {split:?}")))?;
        let (w, b) = match (checkpoint.get("weight"), checkpoint.get("bias")) {
            (Some(w), Some(b)) => (w, b),
            _ => return Err(Error::validation("linear checkpoint needs `weight` and `bias`")),
        };
        let c = b.data.len();
        if w.shape != [c as u32, data.dim as u32] {
            return Err(Error::validation(format!("weight shape {:?} does not fit {c}x{}", w.shape, data.dim)));
        }
        let mut logits = Vec::with_capacity(data.n() * c);
        for i in 0..data.n() {
            let x = data.row(i);
            for k in 0..c {
                let wk = &w.data[k * data.dim..(k + 1) * data.dim];
                logits.push(wk.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b.data[k]);
            }
        }
        EvalTable::new(c, logits, data.labels.clone())
    }
}

//! In-memory containers for evaluation tables and weight checkpoints, plus
//! their binary codecs and the on-disk run-store layout.
//!
//! Everything here stores 64-bit floats in memory. Files carry 32-bit
//! floats: decoding widens exactly, encoding narrows with round-to-nearest-even.

mod codec;
mod layout;

pub use codec::{read_checkpoint, read_eval_table, write_checkpoint, write_eval_table, EVAL_MAGIC};
pub use layout::{format_index, load_run_checkpoints, load_store, parse_index, save_store};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logits and labels for one split of one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    n: usize,
    c: usize,
    logits: Vec<f64>,
    labels: Vec<u32>,
}

impl EvalTable {
    /// Builds a table from row-major logits. `logits.len()` must be `labels.len() * c`.
    pub fn new(c: usize, logits: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::validation("eval table needs at least one row"));
        }
        if c < 2 {
            return Err(Error::validation(format!("eval table needs at least 2 classes, got {c}")));
        }
        if logits.len() != n * c {
            return Err(Error::validation(format!(
                "logit count {} does not match {n} rows x {c} classes",
                logits.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y as usize >= c) {
            return Err(Error::validation(format!("label {y} at row {i} is not below class count {c}")));
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite logit at row {}, class {}",
                pos / c,
                pos % c
            )));
        }
        Ok(EvalTable { n, c, logits, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u32>) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::validation("ragged logit rows"));
        }
        if rows.len() != labels.len() {
            return Err(Error::validation("row count differs from label count"));
        }
        Self::new(c, rows.concat(), labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.c..(i + 1) * self.c]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.logits.chunks_exact(self.c)
    }

    /// Same labels, new logits of identical shape.
    pub fn with_logits(&self, logits: Vec<f64>) -> Result<Self> {
        Self::new(self.c, logits, self.labels.clone())
    }

    /// Same logits, different labels (e.g. clean labels for the clean-error metric).
    pub fn with_labels(&self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::validation(format!(
                "label vector has {} entries, table has {} rows",
                labels.len(),
                self.n
            )));
        }
        Self::new(self.c, self.logits.clone(), labels)
    }

    /// Rows selected by position, in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut logits = Vec::with_capacity(rows.len() * self.c);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.n {
                return Err(Error::validation(format!("row {r} out of range for {} rows", self.n)));
            }
            logits.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Self::new(self.c, logits, labels)
    }

    /// Predicted class per row (lowest index wins ties).
    pub fn predictions(&self) -> Vec<u32> {
        self.rows().map(|r| crate::metrics::argmax(r) as u32).collect()
    }
}

/// One named weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<u32>, data: Vec<f64>) -> Self {
        Tensor { name: name.into(), shape, data }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().map(|&d| d as usize).product()
    }
}

/// Named flat weight tensors of one checkpoint, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointTensors {
    tensors: Vec<Tensor>,
}

impl CheckpointTensors {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|u| u.name == t.name) {
                return Err(Error::validation(format!("duplicate tensor name {:?}", t.name)));
            }
            if t.data.len() != t.numel() {
                return Err(Error::validation(format!(
                    "tensor {:?} has {} values but shape {:?} needs {}",
                    t.name,
                    t.data.len(),
                    t.shape,
                    t.numel()
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("tensor {:?} has a non-finite entry", t.name)));
            }
        }
        Ok(CheckpointTensors { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_elems(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    /// True when names and shapes agree tensor by tensor.
    pub fn same_schema(&self, other: &CheckpointTensors) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub(crate) fn check_schema(&self, other: &CheckpointTensors) -> Result<()> {
        if self.same_schema(other) {
            Ok(())
        } else {
            Err(Error::validation("checkpoint tensor names or shapes do not match"))
        }
    }
}

/// A checkpoint's position: the run it belongs to and its (possibly fractional) epoch tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub run: u32,
    pub index: f64,
}

/// Everything recorded for one checkpoint of one run.
#[derive(Debug, Clone)]
pub struct Entry {
    pub index: f64,
    pub checkpoint: Option<CheckpointTensors>,
    pub tables: BTreeMap<String, EvalTable>,
}

/// Checkpoints of one training run, ordered by strictly increasing index.
#[derive(Debug, Clone, Default)]
pub struct Run {
    entries: Vec<Entry>,
}

impl Run {
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, index: f64) -> Option<usize> {
        self.entries.iter().position(|e| e.index == index)
    }

    /// Tables of `split` at every index, failing on the first missing one.
    pub fn split_tables(&self, run: u32, split: &str) -> Result<Vec<&EvalTable>> {
        self.entries
            .iter()
            .map(|e| {
                e.tables.get(split).ok_or_else(|| {
                    Error::validation(format!(
                        "run {run} has no {split:?} table at index {}",
                        format_index(e.index)
                    ))
                })
            })
            .collect()
    }

    /// Checkpoints at every index, failing on the first missing one.
    pub fn checkpoints(&self, run: u32) -> Result<Vec<&CheckpointTensors>> {
        self.entries
            .iter()
            .map(|e| {
                e.checkpoint.as_ref().ok_or_else(|| {
                    Error::validation(format!(
                        "run {run} has no checkpoint at index {}",
                        format_index(e.index)
                    ))
                })
            })
            .collect()
    }
}

/// Checkpoints and eval tables of several runs.
///
/// Every table of a given split has the same `(n, c)` across all runs and
/// indices; this is checked on insertion.
#[derive(Debug, Clone, Default)]
pub struct RunStore {
    runs: BTreeMap<u32, Run>,
    split_shapes: BTreeMap<String, (usize, usize)>,
}

impl RunStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a checkpoint to `run`. Indices must be positive and strictly increasing per run.
    pub fn insert(
        &mut self,
        at: CheckpointIndex,
        checkpoint: Option<CheckpointTensors>,
        tables: BTreeMap<String, EvalTable>,
    ) -> Result<()> {
        let CheckpointIndex { run, index } = at;
        if run < 1 {
            return Err(Error::validation("run identifiers start at 1"));
        }
        if !(index.is_finite() && index > 0.0) {
            return Err(Error::validation(format!("checkpoint index must be positive, got {index}")));
        }
        if let Some(last) = self.runs.get(&run).and_then(|r| r.entries.last()) {
            if index <= last.index {
                return Err(Error::validation(format!(
                    "run {run}: index {index} does not follow {}",
                    last.index
                )));
            }
        }
        if let Some(first) = self
            .runs
            .values()
            .flat_map(|r| r.entries.iter())
            .find_map(|e| e.checkpoint.as_ref())
        {
            if let Some(ck) = &checkpoint {
                first.check_schema(ck)?;
            }
        }
        for (split, t) in &tables {
            if let Some(&(n, c)) = self.split_shapes.get(split) {
                if (n, c) != (t.n(), t.c()) {
                    return Err(Error::validation(format!(
                        "run {run} index {index}: split {split:?} has shape {}x{}, expected {n}x{c}",
                        t.n(),
                        t.c()
                    )));
                }
            }
        }
        for (split, t) in &tables {
            self.split_shapes.entry(split.clone()).or_insert((t.n(), t.c()));
        }
        self.runs.entry(run).or_default().entries.push(Entry { index, checkpoint, tables });
        Ok(())
    }

    pub fn run_ids(&self) -> Vec<u32> {
        self.runs.keys().copied().collect()
    }

    pub fn run(&self, id: u32) -> Option<&Run> {
        self.runs.get(&id)
    }

    pub(crate) fn require_run(&self, id: u32) -> Result<&Run> {
        self.runs.get(&id).ok_or_else(|| Error::validation(format!("store has no run {id}")))
    }

    pub fn runs(&self) -> impl Iterator<Item = (u32, &Run)> {
        self.runs.iter().map(|(&k, v)| (k, v))
    }

    pub fn splits(&self) -> Vec<String> {
        self.split_shapes.keys().cloned().collect()
    }

    pub fn split_shape(&self, split: &str) -> Option<(usize, usize)> {
        self.split_shapes.get(split).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Indices present in every listed run, as the longest shared prefix of their grids.
    pub fn common_grid(&self, runs: &[u32]) -> Result<Vec<f64>> {
        let mut grid: Option<Vec<f64>> = None;
        for &r in runs {
            let idx = self.require_run(r)?.indices();
            grid = Some(match grid {
                None => idx,
                Some(g) => g.iter().zip(&idx).take_while(|(a, b)| a == b).map(|(a, _)| *a).collect(),
            });
        }
        Ok(grid.unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize) -> EvalTable {
        EvalTable::new(2, vec![0.0; 2 * n], vec![0; n]).unwrap()
    }

    fn tables(n: usize) -> BTreeMap<String, EvalTable> {
        BTreeMap::from([("val".to_string(), table(n))])
    }

    #[test]
    fn table_invariants() {
        assert!(EvalTable::new(2, vec![], vec![]).is_err());
        assert!(EvalTable::new(1, vec![0.0], vec![0]).is_err());
        assert!(EvalTable::new(2, vec![0.0, 0.0], vec![2]).is_err());
        assert!(EvalTable::new(2, vec![0.0, f64::NAN], vec![0]).is_err());
        assert!(EvalTable::new(2, vec![0.0; 3], vec![0]).is_err());
        let t = EvalTable::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![1, 0]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0]);
        assert_eq!(t.predictions(), vec![1, 1]);
    }

    #[test]
    fn checkpoint_invariants() {
        let dup = vec![Tensor::new("w", vec![1], vec![0.0]), Tensor::new("w", vec![1], vec![1.0])];
        assert!(CheckpointTensors::new(dup).is_err());
        assert!(CheckpointTensors::new(vec![Tensor::new("w", vec![2], vec![0.0])]).is_err());
        assert!(CheckpointTensors::new(vec![Tensor::new("w", vec![1], vec![f64::INFINITY])]).is_err());
        let c = CheckpointTensors::new(vec![
            Tensor::new("a", vec![2, 2], vec![0.0; 4]),
            Tensor::new("b", vec![3], vec![0.0; 3]),
        ])
        .unwrap();
        assert_eq!(c.total_elems(), 7);
    }

    #[test]
    fn store_rejects_non_increasing_index() {
        let mut s = RunStore::new();
        s.insert(CheckpointIndex { run: 1, index: 1.0 }, None, tables(3)).unwrap();
        assert!(s.insert(CheckpointIndex { run: 1, index: 1.0 }, None, tables(3)).is_err());
        assert!(s.insert(CheckpointIndex { run: 1, index: 0.5 }, None, tables(3)).is_err());
        assert!(s.insert(CheckpointIndex { run: 2, index: 0.0 }, None, tables(3)).is_err());
        s.insert(CheckpointIndex { run: 1, index: 1.7 }, None, tables(3)).unwrap();
        assert_eq!(s.run(1).unwrap().indices(), vec![1.0, 1.7]);
    }

    #[test]
    fn store_enforces_split_shape() {
        let mut s = RunStore::new();
        s.insert(CheckpointIndex { run: 1, index: 1.0 }, None, tables(3)).unwrap();
        let err = s.insert(CheckpointIndex { run: 2, index: 1.0 }, None, tables(4));
        assert!(matches!(err, Err(Error::Validation(_))));
        assert!(s.run(2).is_none());
    }

    #[test]
    fn common_grid_truncates_to_shared_prefix() {
        let mut s = RunStore::new();
        for i in 1..=4 {
            s.insert(CheckpointIndex { run: 1, index: i as f64 }, None, tables(2)).unwrap();
        }
        for i in 1..=2 {
            s.insert(CheckpointIndex { run: 2, index: i as f64 }, None, tables(2)).unwrap();
        }
        assert_eq!(s.common_grid(&[1, 2]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(s.common_grid(&[1]).unwrap().len(), 4);
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{SpiralsDataset, SynthData};
use super::mlp::Mlp;
use super::rng::stream;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::store::{save_store, CheckpointIndex, CheckpointTensors, EvalTable, RunStore};
use crate::transforms::SWA_SPLIT_PREFIX;
use crate::transforms::SwaState;

/// Network shape and optimizer settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Number of affine layers, including the output layer.
    pub depth: usize,
    pub hidden: usize,
    pub classes: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Fraction of the training set each run sees.
    pub subsample: f64,
    /// Epochs between checkpoints; fractional values checkpoint mid-epoch.
    pub checkpoint_interval: f64,
    pub seed: u64,
}

impl MlpConfig {
    /// Four layers of 512 rectifier units, 1000 epochs.
    pub fn standard(seed: u64) -> Self {
        MlpConfig {
            depth: 4,
            hidden: 512,
            classes: 2,
            lr: 0.05,
            epochs: 1000,
            batch: 64,
            subsample: 0.5,
            checkpoint_interval: 10.0,
            seed,
        }
    }

    /// Same as [`MlpConfig::standard`] with 128 hidden units.
    pub fn desk(seed: u64) -> Self {
        MlpConfig { hidden: 128, ..Self::standard(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::validation(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.hidden < 1 || self.classes < 2 || self.batch < 1 || self.epochs < 1 {
            return Err(Error::validation("hidden, batch and epochs must be positive and classes at least 2"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::validation(format!("subsample must be in (0, 1], got {}", self.subsample)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::validation(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.checkpoint_interval.is_finite() && self.checkpoint_interval > 0.0) {
            return Err(Error::validation("checkpoint interval must be positive"));
        }
        if self.checkpoint_interval > self.epochs as f64 {
            return Err(Error::validation("checkpoint interval exceeds the number of epochs"));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(std::iter::repeat_n(self.hidden, self.depth - 1));
        w.push(self.classes);
        w
    }

    pub fn subsample_size(&self, n: usize) -> usize {
        ((self.subsample * n as f64).round() as usize).clamp(1, n)
    }

    /// Checkpoint indices, in epochs.
    pub fn checkpoint_indices(&self) -> Vec<f64> {
        let count = (self.epochs as f64 / self.checkpoint_interval + 1e-9).floor() as usize;
        (1..=count).map(|k| round3(k as f64 * self.checkpoint_interval)).collect()
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Everything recorded while training one member of the ensemble.
#[derive(Debug, Clone)]
pub struct TrainRunOutput {
    pub run: u32,
    /// Rows of the training set this run was trained on.
    pub subsample: Vec<usize>,
    pub indices: Vec<f64>,
    /// `None` where checkpoints were not retained; the final checkpoint is always kept.
    pub checkpoints: Vec<Option<CheckpointTensors>>,
    /// Per checkpoint: `train` (the subsample), `val`, `test` and their `swa-` counterparts.
    pub tables: Vec<BTreeMap<String, EvalTable>>,
}

impl TrainRunOutput {
    /// Predicted classes on the run's training subsample at checkpoint `pos`.
    pub fn train_predictions(&self, pos: usize) -> Vec<u32> {
        self.tables[pos]["train"].predictions()
    }
}

fn inputs(points: &[[f64; 2]]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((points.len(), 2), points.as_flattened()).expect("n x 2")
}

fn table(logits: Array2<f64>, labels: &[u32]) -> Result<EvalTable> {
    let c = logits.ncols();
    EvalTable::new(c, logits.into_raw_vec_and_offset().0, labels.to_vec())
}

fn eval_splits(net: &Mlp, splits: &[(&str, &SpiralsDataset)], prefix: &str) -> Result<BTreeMap<String, EvalTable>> {
    splits
        .iter()
        .map(|(name, d)| Ok((format!("{prefix}{name}"), table(net.forward(inputs(&d.points)), &d.labels)?)))
        .collect()
}

/// Trains run `run` on a random subsample of `data.train` with mini-batch gradient descent.
pub fn mlp_train(data: &SynthData, cfg: &MlpConfig, run: u32, keep_checkpoints: bool) -> Result<TrainRunOutput> {
    cfg.validate()?;
    let n = data.train.len();
    let m = cfg.subsample_size(n);
    let mut subsample: Vec<usize> = rand::seq::index::sample(&mut stream(cfg.seed, run, "subsample"), n, m).into_vec();
    subsample.sort_unstable();
    let train = data.train.subset(&subsample);
    let splits = [("train", &train), ("val", &data.val), ("test", &data.test)];

    let mut net = Mlp::init(&cfg.widths(), &mut stream(cfg.seed, run, "init"));
    let mut order_rng = stream(cfg.seed, run, "batches");
    let steps_per_epoch = m.div_ceil(cfg.batch);
    let indices = cfg.checkpoint_indices();
    let checkpoint_steps: Vec<usize> = indices
        .iter()
        .map(|&e| ((e * steps_per_epoch as f64).round() as usize).max(1))
        .collect();

    let mut swa = SwaState::new();
    let mut out = TrainRunOutput {
        run,
        subsample,
        indices: indices.clone(),
        checkpoints: Vec::with_capacity(indices.len()),
        tables: Vec::with_capacity(indices.len()),
    };
    let mut order: Vec<usize> = (0..m).collect();
    let mut xb = Array2::<f64>::zeros((cfg.batch, 2));
    let mut yb = vec![0u32; cfg.batch];
    let mut step = 0usize;
    let mut next = 0usize;
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch) {
            let rows = chunk.len();
            for (r, &i) in chunk.iter().enumerate() {
                xb[[r, 0]] = train.points[i][0];
                xb[[r, 1]] = train.points[i][1];
                yb[r] = train.labels[i];
            }
            let (loss, grads) = net.loss_and_grad(xb.slice(ndarray::s![..rows, ..]), &yb[..rows]);
            if !loss.is_finite() {
                return Err(Error::Diverged { run, step, loss });
            }
            net.sgd_step(&grads, cfg.lr);
            step += 1;
            while next < checkpoint_steps.len() && checkpoint_steps[next] == step {
                let ck = net.to_checkpoint();
                swa.absorb(&ck)?;
                let avg = Mlp::from_checkpoint(swa.mean().expect("absorbed"))?;
                let mut tables = eval_splits(&net, &splits, "")?;
                tables.extend(eval_splits(&avg, &splits, SWA_SPLIT_PREFIX)?);
                out.tables.push(tables);
                out.checkpoints.push((keep_checkpoints || next + 1 == checkpoint_steps.len()).then_some(ck));
                next += 1;
            }
            if next == checkpoint_steps.len() {
                break 'epochs;
            }
        }
    }
    Ok(out)
}

/// Knobs for [`run_ensemble_experiment_with`] that do not affect training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentOptions {
    pub n_models: usize,
    /// Keep weights of every checkpoint in the store (memory grows with width squared).
    /// The final checkpoint of each run is kept regardless.
    pub keep_checkpoints: bool,
}

/// An ensemble of trained runs together with the data needed to re-evaluate it.
#[derive(Debug, Clone)]
pub struct SynthExperiment {
    pub config: MlpConfig,
    pub data: SynthData,
    pub subsamples: BTreeMap<u32, Vec<usize>>,
    pub store: RunStore,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: MlpConfig,
    data: SynthData,
    subsamples: BTreeMap<u32, Vec<usize>>,
}

pub const SYNTH_MANIFEST: &str = "synth.json";

impl SynthExperiment {
    /// Evaluator for the `val` and `test` splits, usable for SWA of stored checkpoints.
    pub fn evaluator(&self) -> MlpEvaluator {
        MlpEvaluator::new(&self.data)
    }

    /// Training rows of `run`, with their flip mask, in table row order.
    pub fn train_subset(&self, run: u32) -> Option<SpiralsDataset> {
        self.subsamples.get(&run).map(|rows| self.data.train.subset(rows))
    }

    /// Writes the store layout plus a `synth.json` with config, data and subsamples.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_store(&self.store, dir)?;
        let manifest = Manifest {
            config: self.config.clone(),
            data: self.data.clone(),
            subsamples: self.subsamples.clone(),
        };
        let path = dir.join(SYNTH_MANIFEST);
        std::fs::write(&path, serde_json::to_vec(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SYNTH_MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        Ok(SynthExperiment {
            config: m.config,
            data: m.data,
            subsamples: m.subsamples,
            store: crate::store::load_store(dir)?,
        })
    }
}

/// Trains `n_models` runs and collects their checkpoints and tables into a store.
pub fn run_ensemble_experiment(n_models: usize, data: &SynthData, cfg: &MlpConfig) -> Result<RunStore> {
    let opts = ExperimentOptions { n_models, keep_checkpoints: true };
    Ok(run_ensemble_experiment_with(data, cfg, &opts)?.store)
}

pub fn run_ensemble_experiment_with(
    data: &SynthData,
    cfg: &MlpConfig,
    opts: &ExperimentOptions,
) -> Result<SynthExperiment> {
    if opts.n_models < 2 {
        return Err(Error::validation(format!("an ensemble needs at least 2 models, got {}", opts.n_models)));
    }
    cfg.validate()?;
    let outputs = (1..=opts.n_models as u32)
        .into_par_iter()
        .map(|run| mlp_train(data, cfg, run, opts.keep_checkpoints))
        .collect::<Result<Vec<_>>>()?;
    let mut store = RunStore::new();
    let mut subsamples = BTreeMap::new();
    for out in outputs {
        let run = out.run;
        for ((index, ck), tables) in out.indices.into_iter().zip(out.checkpoints).zip(out.tables) {
            store.insert(CheckpointIndex { run, index }, ck, tables)?;
        }
        subsamples.insert(run, out.subsample);
    }
    Ok(SynthExperiment { config: cfg.clone(), data: data.clone(), subsamples, store })
}

/// Evaluates MLP checkpoints on the shared `val` and `test` splits.
#[derive(Debug, Clone)]
pub struct MlpEvaluator {
    splits: BTreeMap<String, SpiralsDataset>,
}

impl MlpEvaluator {
    pub fn new(data: &SynthData) -> Self {
        MlpEvaluator {
            splits: BTreeMap::from([("val".to_string(), data.val.clone()), ("test".to_string(), data.test.clone())]),
        }
    }

    /// Adds or replaces a split, e.g. a run's training subsample.
    pub fn with_split(mut self, name: &str, data: SpiralsDataset) -> Self {
        self.splits.insert(name.to_string(), data);
        self
    }
}

impl Evaluator for MlpEvaluator {
    fn evaluate(&self, checkpoint: &CheckpointTensors, split: &str) -> Result<EvalTable> {
        let d = self
            .splits
            .get(split)
            .ok_or_else(|| Error::validation(format!("MLP evaluator has no split {split:?}")))?;
        let net = Mlp::from_checkpoint(checkpoint)?;
        table(net.forward(inputs(&d.points)), &d.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{error_metric, loss_metric};
    use crate::transforms::PosthocContext;
    use crate::calibrate::FitOptions;

    fn tiny(seed: u64) -> MlpConfig {
        MlpConfig { hidden: 8, epochs: 20, checkpoint_interval: 1.0, ..MlpConfig::standard(seed) }
    }

    fn small_data() -> SynthData {
        SynthData::generate(200, 100, 0.2, 7).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::standard(0).validate().is_ok());
        assert!(MlpConfig { depth: 1, ..MlpConfig::standard(0) }.validate().is_err());
        assert!(MlpConfig { subsample: 0.0, ..MlpConfig::standard(0) }.validate().is_err());
        assert!(MlpConfig { subsample: 1.5, ..MlpConfig::standard(0) }.validate().is_err());
        assert_eq!(MlpConfig::standard(0).widths(), vec![2, 512, 512, 512, 2]);
        assert_eq!(MlpConfig::standard(0).checkpoint_indices().len(), 100);
        let frac = MlpConfig { epochs: 2, checkpoint_interval: 0.5, ..MlpConfig::standard(0) };
        assert_eq!(frac.checkpoint_indices(), vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let data = small_data();
        let cfg = MlpConfig { lr: 0.0, epochs: 3, ..tiny(1) };
        let out = mlp_train(&data, &cfg, 1, true).unwrap();
        let init = Mlp::init(&cfg.widths(), &mut stream(cfg.seed, 1, "init")).to_checkpoint();
        assert_eq!(out.checkpoints.len(), 3);
        for ck in &out.checkpoints {
            assert_eq!(ck.as_ref().unwrap(), &init);
        }
    }

    #[test]
    fn ensemble_bookkeeping() {
        let data = small_data();
        let store = run_ensemble_experiment(2, &data, &tiny(3)).unwrap();
        assert_eq!(store.run_ids(), vec![1, 2]);
        for (_, r) in store.runs() {
            assert_eq!(r.len(), 20);
            assert_eq!(r.indices(), (1..=20).map(f64::from).collect::<Vec<_>>());
        }
        assert!(run_ensemble_experiment(1, &data, &tiny(3)).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_data();
        let a = mlp_train(&data, &tiny(5), 2, true).unwrap();
        let b = mlp_train(&data, &tiny(5), 2, true).unwrap();
        assert_eq!(a.checkpoints, b.checkpoints);
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.subsample, b.subsample);
        let c = mlp_train(&data, &tiny(5), 3, true).unwrap();
        assert_ne!(a.subsample, c.subsample);
    }

    #[test]
    fn stored_swa_tables_match_evaluator() {
        let data = small_data();
        let cfg = MlpConfig { epochs: 5, ..tiny(9) };
        let exp = run_ensemble_experiment_with(&data, &cfg, &ExperimentOptions { n_models: 2, keep_checkpoints: true })
            .unwrap();
        let ev = exp.evaluator();
        let with_ev = PosthocContext::new(&exp.store, Some(&ev), FitOptions::default());
        let from_tables = PosthocContext::new(&exp.store, None, FitOptions::default());
        for pos in 0..5 {
            let a = with_ev.swa(1, pos).unwrap();
            let b = from_tables.swa(1, pos).unwrap();
            for s in ["val", "test"] {
                let (x, y) = (a.table(s).unwrap(), b.table(s).unwrap());
                for (u, v) in x.logits().iter().zip(y.logits()) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn clean_data_is_learned() {
        let data = SynthData::generate(1000, 100, 0.0, 1).unwrap();
        let cfg = MlpConfig { epochs: 500, checkpoint_interval: 500.0, ..MlpConfig::desk(1) };
        let out = mlp_train(&data, &cfg, 1, false).unwrap();
        let err = error_metric(&out.tables[0]["train"]).value;
        assert!(err < 0.05, "train error {err}");
    }

    #[test]
    fn small_steps_descend() {
        let data = SynthData::generate(200, 100, 0.0, 13).unwrap();
        let cfg = MlpConfig { hidden: 16, lr: 1e-3, epochs: 30, checkpoint_interval: 1.0, ..MlpConfig::standard(13) };
        let out = mlp_train(&data, &cfg, 1, false).unwrap();
        let losses: Vec<f64> = out.tables.iter().map(|t| loss_metric(&t["train"]).value).collect();
        for w in losses.windows(2) {
            assert!(w[1] - w[0] <= 1e-3, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn experiment_roundtrips_through_disk() {
        let data = small_data();
        let cfg = MlpConfig { epochs: 2, ..tiny(17) };
        let exp = run_ensemble_experiment_with(&data, &cfg, &ExperimentOptions { n_models: 2, keep_checkpoints: false })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        exp.save(dir.path()).unwrap();
        let back = SynthExperiment::load(dir.path()).unwrap();
        assert_eq!(back.config, exp.config);
        assert_eq!(back.data, exp.data);
        assert_eq!(back.subsamples, exp.subsamples);
        assert_eq!(back.store.run_ids(), vec![1, 2]);
        assert_eq!(back.train_subset(1).unwrap().len(), 100);
    }
}

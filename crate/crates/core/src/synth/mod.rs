//! Noisy two-spirals data, a small rectifier network trained by hand-written
//! backpropagation, and subsampled ensembles recorded into a [`RunStore`](crate::store::RunStore).

pub mod data;
pub mod mlp;
pub mod rng;
pub mod surface;
pub mod train;

pub use data::{gen_spirals, SpiralsDataset, SynthData};
pub use mlp::{mlp_forward, Mlp};
pub use surface::{render_decision_surface, render_decision_surface_batch, Bounds, ClassGrid};
pub use train::{
    mlp_train, run_ensemble_experiment, run_ensemble_experiment_with, ExperimentOptions, MlpConfig, MlpEvaluator,
    SynthExperiment, TrainRunOutput,
};

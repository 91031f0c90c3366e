use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::calibrate::FitOptions;
use crate::diagnostics::{curves, detect_reversal, CurvePair, ReversalReport};
use crate::error::Result;
use crate::eval::Evaluator;
use crate::metrics::MetricKind;
use crate::selection::{
    hybrid_select, naive_swa_ens_ts, naive_swa_ts, posthoc_select_swa_ens_ts, posthoc_select_swa_ts, SelectionReport,
};
use crate::store::{load_store, RunStore};
use crate::synth::train::SYNTH_MANIFEST;
use crate::synth::SynthExperiment;
use crate::transforms::{PosthocContext, TransformKind};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// How reductions were ordered, so values can be reproduced exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub row_order: String,
    pub run_order: String,
    pub reduction: String,
    pub base_curve: String,
    pub ties: String,
    pub float_digits: u32,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            row_order: "rows in file order".into(),
            run_order: "members and runs in ascending run id".into(),
            reduction: "sequential 64-bit sums in the stated order".into(),
            base_curve: "latest_checkpoint".into(),
            ties: "earliest index".into(),
            float_digits: 9,
        }
    }
}

/// The JSON document every subcommand writes to standard output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub engine_version: String,
    pub conventions: Conventions,
    pub inputs: Value,
    pub result: Value,
}

impl Report {
    pub fn new(command: &str, inputs: Value, result: impl Serialize) -> Result<Self> {
        Ok(Report {
            command: command.to_string(),
            engine_version: ENGINE_VERSION.to_string(),
            conventions: Conventions::default(),
            inputs,
            result: serde_json::to_value(result)?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveEntry {
    pub curves: CurvePair,
    pub reversal: ReversalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSelection {
    pub run: u32,
    pub naive: SelectionReport,
    pub posthoc: SelectionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSelection {
    pub naive: SelectionReport,
    pub posthoc: SelectionReport,
    pub hybrid: SelectionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSelection {
    pub metric: MetricKind,
    pub swa_ts: Vec<RunSelection>,
    pub swa_ens_ts: Option<EnsembleSelection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoreReport {
    pub runs: Vec<u32>,
    pub split: String,
    pub curves: Vec<CurveEntry>,
    pub selection: Vec<MetricSelection>,
}

/// Loads a store directory together with an evaluator when it was written by the synthetic trainer.
pub fn open_store(dir: &Path) -> Result<(RunStore, Option<Box<dyn Evaluator>>)> {
    if dir.join(SYNTH_MANIFEST).exists() {
        let exp = SynthExperiment::load(dir)?;
        let ev: Box<dyn Evaluator> = Box::new(exp.evaluator());
        return Ok((exp.store, Some(ev)));
    }
    Ok((load_store(dir)?, None))
}

/// Curves, reversal reports and selections for every transform and metric.
/// Ensemble transforms are skipped when the store holds a single run.
pub fn store_report(ctx: &PosthocContext<'_>, metrics: &[MetricKind], split: &str) -> Result<StoreReport> {
    let runs = ctx.store().run_ids();
    let mut out = StoreReport { runs: runs.clone(), split: split.to_string(), curves: Vec::new(), selection: Vec::new() };
    let kinds = TransformKind::ALL.into_iter().filter(|k| runs.len() > 1 || !k.is_ensemble());
    for kind in kinds {
        for &metric in metrics {
            let pair = curves(ctx, kind, &runs, split, metric)?;
            let reversal = detect_reversal(&pair)?;
            out.curves.push(CurveEntry { curves: pair, reversal });
        }
    }
    for &metric in metrics {
        if !matches!(metric, MetricKind::Loss | MetricKind::Error) {
            continue;
        }
        let swa_ts = runs
            .iter()
            .map(|&run| {
                Ok(RunSelection {
                    run,
                    naive: naive_swa_ts(ctx, run, metric)?,
                    posthoc: posthoc_select_swa_ts(ctx, run, metric)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let swa_ens_ts = if runs.len() > 1 {
            Some(EnsembleSelection {
                naive: naive_swa_ens_ts(ctx, &runs, metric)?,
                posthoc: posthoc_select_swa_ens_ts(ctx, &runs, metric)?,
                hybrid: hybrid_select(ctx, &runs, metric)?,
            })
        } else {
            None
        };
        out.selection.push(MetricSelection { metric, swa_ts, swa_ens_ts });
    }
    Ok(out)
}

/// Everything [`store_report`] produces for the store in `store_dir`, wrapped as a [`Report`].
pub fn report_all(store_dir: &Path, metrics: &[MetricKind], split: &str) -> Result<Report> {
    let (store, ev) = open_store(store_dir)?;
    let mut splits = vec!["val"];
    if split != "val" {
        splits.push(split);
    }
    let ctx = PosthocContext::new(&store, ev.as_deref(), FitOptions::default()).with_splits(&splits);
    let result = store_report(&ctx, metrics, split)?;
    let inputs = json!({
        "store": store_dir.display().to_string(),
        "metrics": metrics,
        "split": split,
    });
    Report::new("report", inputs, result)
}

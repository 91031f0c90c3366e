//! Checkpoint selection: naive (untransformed validation metric), post-hoc
//! (transformed validation metric) for SWA+TS and SWA+Ens+TS, the hybrid of
//! the two, and a streaming early-stopping monitor on SWA+TS.
//!
//! Ties go to the earliest index everywhere.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_temperature, fit_temperature, FitOptions};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::metrics::{error_metric, evaluate, loss_metric, MetricKind, MetricValue};
use crate::store::{CheckpointIndex, CheckpointTensors, EvalTable};
use crate::transforms::{PosthocContext, SwaState, TransformSpec, Transformed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Naive,
    PosthocSwaTs,
    PosthocSwaEnsTs,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub error: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub strategy: Strategy,
    /// Chosen checkpoint per run, in ascending run order.
    pub chosen: Vec<CheckpointIndex>,
    /// The quantity that was minimized (for naive selection: the base metric).
    pub selection_metric: MetricValue,
    /// Validation metric of the reported model.
    pub val_metric: MetricValue,
    pub test_metric: Option<MetricValue>,
    pub val: SplitSummary,
    pub test: Option<SplitSummary>,
    /// `None` when the reported model is the untransformed checkpoint.
    pub transform: Option<TransformSpec>,
}

/// Position of the smallest value; the earliest position wins ties.
pub fn naive_select(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::validation("cannot select from an empty series"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("series contains NaN"));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    Ok(best)
}

fn check_metric(metric: MetricKind) -> Result<()> {
    if metric == MetricKind::CleanError {
        return Err(Error::validation("selection metric must be error, loss or perplexity"));
    }
    Ok(())
}

fn summary(t: &EvalTable) -> SplitSummary {
    SplitSummary { error: error_metric(t).value, loss: loss_metric(t).value }
}

fn chosen(ctx: &PosthocContext<'_>, members: &[(u32, usize)]) -> Result<Vec<CheckpointIndex>> {
    let mut m = members.to_vec();
    m.sort_unstable();
    m.iter()
        .map(|&(run, p)| {
            let r = ctx.store().require_run(run)?;
            r.entries()
                .get(p)
                .map(|e| CheckpointIndex { run, index: e.index })
                .ok_or_else(|| Error::validation(format!("run {run} has no position {p}")))
        })
        .collect()
}

fn report(
    ctx: &PosthocContext<'_>,
    strategy: Strategy,
    members: &[(u32, usize)],
    selection_metric: MetricValue,
    tables: &BTreeMap<String, EvalTable>,
    transform: Option<TransformSpec>,
    metric: MetricKind,
) -> Result<SelectionReport> {
    let val = tables.get("val").ok_or_else(|| Error::validation("selected model has no val table"))?;
    let test = tables.get("test");
    Ok(SelectionReport {
        strategy,
        chosen: chosen(ctx, members)?,
        selection_metric,
        val_metric: evaluate(val, metric, None)?,
        test_metric: test.map(|t| evaluate(t, metric, None)).transpose()?,
        val: summary(val),
        test: test.map(summary),
        transform,
    })
}

fn base_val_series(ctx: &PosthocContext<'_>, run: u32, metric: MetricKind) -> Result<Vec<f64>> {
    ctx.store()
        .require_run(run)?
        .split_tables(run, "val")?
        .into_iter()
        .map(|t| evaluate(t, metric, None).map(|m| m.value))
        .collect()
}

fn naive_position(ctx: &PosthocContext<'_>, run: u32, metric: MetricKind) -> Result<(usize, MetricValue)> {
    let series = base_val_series(ctx, run, metric)?;
    let pos = naive_select(&series)?;
    let n = ctx.store().split_shape("val").map_or(0, |s| s.0);
    Ok((pos, MetricValue { kind: metric, value: series[pos], n }))
}

/// Naive selection on the base validation metric, reporting the untransformed checkpoint.
pub fn naive_base(ctx: &PosthocContext<'_>, run: u32, metric: MetricKind) -> Result<SelectionReport> {
    check_metric(metric)?;
    let (pos, sel) = naive_position(ctx, run, metric)?;
    report(ctx, Strategy::Naive, &[(run, pos)], sel, &ctx.base_tables(run, pos)?, None, metric)
}

/// Naive selection on the base validation metric, reporting SWA+TS at that index.
pub fn naive_swa_ts(ctx: &PosthocContext<'_>, run: u32, metric: MetricKind) -> Result<SelectionReport> {
    check_metric(metric)?;
    let (pos, sel) = naive_position(ctx, run, metric)?;
    let tr = ctx.swa_ts(run, pos)?;
    report(ctx, Strategy::Naive, &[(run, pos)], sel, &tr.tables, Some(tr.spec.clone()), metric)
}

/// Per-run naive indices, combined with SWA+Ens+TS.
pub fn naive_swa_ens_ts(ctx: &PosthocContext<'_>, runs: &[u32], metric: MetricKind) -> Result<SelectionReport> {
    check_metric(metric)?;
    let mut members = Vec::with_capacity(runs.len());
    let mut sel_sum = 0.0;
    for &r in runs {
        let (pos, v) = naive_position(ctx, r, metric)?;
        sel_sum += v.value;
        members.push((r, pos));
    }
    let tr = ctx.swa_ens_ts(&members)?;
    let n = ctx.store().split_shape("val").map_or(0, |s| s.0);
    let sel = MetricValue { kind: metric, value: sel_sum / runs.len().max(1) as f64, n };
    report(ctx, Strategy::Naive, &members, sel, &tr.tables, Some(tr.spec.clone()), metric)
}

/// Minimizes the SWA+TS validation metric over all prefixes of `run`.
pub fn posthoc_select_swa_ts(ctx: &PosthocContext<'_>, run: u32, metric: MetricKind) -> Result<SelectionReport> {
    check_metric(metric)?;
    let len = ctx.store().require_run(run)?.len();
    let mut vals = Vec::with_capacity(len);
    for pos in 0..len {
        vals.push(ctx.swa_ts(run, pos)?.metric("val", metric)?);
    }
    let pos = naive_select(&vals.iter().map(|m| m.value).collect::<Vec<_>>())?;
    let tr = ctx.swa_ts(run, pos)?;
    report(ctx, Strategy::PosthocSwaTs, &[(run, pos)], vals[pos], &tr.tables, Some(tr.spec.clone()), metric)
}

/// SWA+Ens+TS at a shared grid position for every run.
pub fn swa_ens_ts_at(ctx: &PosthocContext<'_>, runs: &[u32], pos: usize) -> Result<Transformed> {
    let members: Vec<(u32, usize)> = runs.iter().map(|&r| (r, pos)).collect();
    ctx.swa_ens_ts(&members)
}

/// Minimizes the SWA+Ens+TS validation metric under the constraint that all
/// runs stop at the same index, searching the runs' common index prefix.
pub fn posthoc_select_swa_ens_ts(
    ctx: &PosthocContext<'_>,
    runs: &[u32],
    metric: MetricKind,
) -> Result<SelectionReport> {
    check_metric(metric)?;
    if runs.is_empty() {
        return Err(Error::validation("no runs selected"));
    }
    let grid = ctx.store().common_grid(runs)?;
    if grid.is_empty() {
        return Err(Error::validation("runs share no checkpoint index"));
    }
    let mut vals = Vec::with_capacity(grid.len());
    for pos in 0..grid.len() {
        vals.push(swa_ens_ts_at(ctx, runs, pos)?.metric("val", metric)?);
    }
    let pos = naive_select(&vals.iter().map(|m| m.value).collect::<Vec<_>>())?;
    let tr = swa_ens_ts_at(ctx, runs, pos)?;
    let members: Vec<(u32, usize)> = runs.iter().map(|&r| (r, pos)).collect();
    report(ctx, Strategy::PosthocSwaEnsTs, &members, vals[pos], &tr.tables, Some(tr.spec.clone()), metric)
}

/// Post-hoc SWA+TS selection within each run, then SWA+Ens+TS over the selected prefixes.
pub fn hybrid_select(ctx: &PosthocContext<'_>, runs: &[u32], metric: MetricKind) -> Result<SelectionReport> {
    check_metric(metric)?;
    if runs.is_empty() {
        return Err(Error::validation("no runs selected"));
    }
    let mut members = Vec::with_capacity(runs.len());
    let mut sel_sum = 0.0;
    for &r in runs {
        let rep = posthoc_select_swa_ts(ctx, r, metric)?;
        let pos = ctx.store().require_run(r)?.position(rep.chosen[0].index).expect("chosen index exists");
        sel_sum += rep.selection_metric.value;
        members.push((r, pos));
    }
    let tr = ctx.swa_ens_ts(&members)?;
    let sel = MetricValue { kind: metric, value: sel_sum / runs.len() as f64, n: tr.table("val")?.n() };
    report(ctx, Strategy::Hybrid, &members, sel, &tr.tables, Some(tr.spec.clone()), metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub patience: usize,
    pub min_delta: f64,
    pub metric: MetricKind,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { patience: 10, min_delta: 0.0, metric: MetricKind::Loss }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    Stop,
}

/// Early-stopping state on the SWA+TS validation metric.
#[derive(Debug, Clone)]
pub struct MonitorState {
    pub swa: SwaState,
    pub best_val: f64,
    pub best_index: Option<f64>,
    pub since_best: usize,
    pub config: MonitorConfig,
}

impl MonitorState {
    pub fn new(config: MonitorConfig) -> Self {
        MonitorState { swa: SwaState::new(), best_val: f64::INFINITY, best_index: None, since_best: 0, config }
    }

    /// Records a validation value. The counter resets only on an improvement larger than `min_delta`.
    pub fn observe(&mut self, index: f64, val: f64) -> Decision {
        if val < self.best_val - self.config.min_delta {
            self.best_val = val;
            self.best_index = Some(index);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        if self.since_best >= self.config.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}

/// Absorbs `ckpt` into the running average, evaluates SWA+TS on val and updates the counters.
pub fn monitor_step(
    state: &mut MonitorState,
    index: f64,
    ckpt: &CheckpointTensors,
    evaluator: &dyn Evaluator,
    opts: &FitOptions,
) -> Result<Decision> {
    check_metric(state.config.metric)?;
    state.swa.absorb(ckpt)?;
    let val = evaluator.evaluate(state.swa.mean().expect("non-empty"), "val")?;
    let fit = fit_temperature(&val, opts)?;
    let scaled = apply_temperature(&val, fit.tau)?;
    let v = evaluate(&scaled, state.config.metric, None)?.value;
    Ok(state.observe(index, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_examples() {
        assert_eq!(naive_select(&[0.5, 0.4, 0.45]).unwrap(), 1);
        assert_eq!(naive_select(&[0.4, 0.4]).unwrap(), 0);
        assert_eq!(naive_select(&[0.9]).unwrap(), 0);
        assert!(naive_select(&[]).is_err());
    }

    #[test]
    fn monitor_counter_semantics() {
        let cfg = MonitorConfig { patience: 3, min_delta: 0.0, metric: MetricKind::Loss };
        let mut m = MonitorState::new(cfg);
        for i in 0..20 {
            assert_eq!(m.observe(i as f64 + 1.0, 1.0 - i as f64 * 0.01), Decision::Continue);
            assert_eq!(m.since_best, 0);
        }

        let mut m = MonitorState::new(cfg);
        assert_eq!(m.observe(1.0, 0.5), Decision::Continue);
        assert_eq!(m.observe(2.0, 0.5), Decision::Continue);
        assert_eq!(m.observe(3.0, 0.5), Decision::Continue);
        assert_eq!(m.observe(4.0, 0.5), Decision::Stop);
        assert_eq!(m.best_index, Some(1.0));

        let mut m = MonitorState::new(MonitorConfig { min_delta: 0.1, ..cfg });
        m.observe(1.0, 0.5);
        m.observe(2.0, 0.45);
        assert_eq!(m.since_best, 1);
        assert_eq!(m.best_index, Some(1.0));
        m.observe(3.0, 0.3);
        assert_eq!(m.since_best, 0);
    }
}

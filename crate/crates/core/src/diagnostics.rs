//! Base and post-hoc curves, post-hoc reversal detection, and the
//! learning-dynamics diagnostics (prediction flips, temperature trajectory).

use serde::{Deserialize, Serialize};

use crate::calibrate::{fit_temperature, TemperatureFit};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricKind};
use crate::store::EvalTable;
use crate::transforms::{PosthocContext, TransformKind};

/// Which base curve a [`CurvePair`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseConvention {
    /// Metric of the latest checkpoint itself (the usual early-stopping view).
    LatestCheckpoint,
    /// Mean of the member metrics of the transform's parameter tuple.
    TupleMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePair {
    pub indices: Vec<f64>,
    pub base: Vec<f64>,
    pub post: Vec<f64>,
    pub metric: MetricKind,
    pub transform: TransformKind,
    pub base_convention: BaseConvention,
}

impl CurvePair {
    pub fn new(
        indices: Vec<f64>,
        base: Vec<f64>,
        post: Vec<f64>,
        metric: MetricKind,
        transform: TransformKind,
    ) -> Result<Self> {
        let c = CurvePair { indices, base, post, metric, transform, base_convention: BaseConvention::LatestCheckpoint };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base.len() != self.indices.len() || self.post.len() != self.indices.len() {
            return Err(Error::validation("curve lists differ in length"));
        }
        if self.indices.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::validation("curve indices must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversalReport {
    pub reversed: bool,
    /// Index pairs `(s, t)` with `base(s) >= base(t)` and `post(s) < post(t)`.
    pub witnesses: Vec<(f64, f64)>,
    pub count: usize,
}

/// Metric of each table, ordered by index.
pub fn base_curve(per_index: &[(f64, &EvalTable)], metric: MetricKind) -> Result<(Vec<f64>, Vec<f64>)> {
    if per_index.is_empty() {
        return Err(Error::validation("base curve needs at least one index"));
    }
    let mut sorted: Vec<&(f64, &EvalTable)> = per_index.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values = sorted.iter().map(|(_, t)| evaluate(t, metric, None).map(|m| m.value)).collect::<Result<_>>()?;
    Ok((sorted.iter().map(|(i, _)| *i).collect(), values))
}

fn check_runs(ctx: &PosthocContext<'_>, runs: &[u32]) -> Result<Vec<f64>> {
    if runs.is_empty() {
        return Err(Error::validation("no runs selected"));
    }
    let grid = ctx.store().common_grid(runs)?;
    if grid.is_empty() {
        return Err(Error::validation("selected runs share no checkpoint index"));
    }
    Ok(grid)
}

/// Mean over `runs` of each run's own metric on `split`, on the runs' shared index grid.
pub fn mean_base_curve(
    ctx: &PosthocContext<'_>,
    runs: &[u32],
    split: &str,
    metric: MetricKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = check_runs(ctx, runs)?;
    let mut acc = vec![0.0; grid.len()];
    for &r in runs {
        let tables = ctx.store().require_run(r)?.split_tables(r, split)?;
        for (a, t) in acc.iter_mut().zip(tables) {
            *a += evaluate(t, metric, None)?.value;
        }
    }
    let k = runs.len() as f64;
    Ok((grid, acc.into_iter().map(|v| v / k).collect()))
}

/// Post-hoc curve of `kind` on `split`.
///
/// Ensemble kinds combine all `runs` at each shared index. Single-model kinds
/// are averaged over `runs`, matching the base-curve mean.
pub fn posthoc_curve(
    ctx: &PosthocContext<'_>,
    kind: TransformKind,
    runs: &[u32],
    split: &str,
    metric: MetricKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = check_runs(ctx, runs)?;
    let mut out = Vec::with_capacity(grid.len());
    for pos in 0..grid.len() {
        let v = if kind.is_ensemble() {
            let members: Vec<(u32, usize)> = runs.iter().map(|&r| (r, pos)).collect();
            ctx.transform(kind, &members)?.metric(split, metric)?.value
        } else {
            let mut acc = 0.0;
            for &r in runs {
                acc += ctx.transform(kind, &[(r, pos)])?.metric(split, metric)?.value;
            }
            acc / runs.len() as f64
        };
        out.push(v);
    }
    Ok((grid, out))
}

pub fn curves(
    ctx: &PosthocContext<'_>,
    kind: TransformKind,
    runs: &[u32],
    split: &str,
    metric: MetricKind,
) -> Result<CurvePair> {
    let (indices, base) = mean_base_curve(ctx, runs, split, metric)?;
    let (_, post) = posthoc_curve(ctx, kind, runs, split, metric)?;
    CurvePair::new(indices, base, post, metric, kind)
}

/// The tuple-mean base curve for SWA: mean of the base metric over each prefix.
pub fn swa_prefix_mean(base: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    base.iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            sum / (i + 1) as f64
        })
        .collect()
}

/// Exhaustive pairwise scan for reversal witnesses, in lexicographic `(s, t)` order.
pub fn detect_reversal(c: &CurvePair) -> Result<ReversalReport> {
    c.validate()?;
    if c.indices.len() < 2 {
        return Err(Error::validation("reversal detection needs at least two indices"));
    }
    let n = c.indices.len();
    let mut witnesses = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if c.base[s] >= c.base[t] && c.post[s] < c.post[t] {
                witnesses.push((c.indices[s], c.indices[t]));
            }
        }
    }
    Ok(ReversalReport { reversed: !witnesses.is_empty(), count: witnesses.len(), witnesses })
}

/// Fraction of positions whose prediction changed, on the masked rows and on the rest.
pub fn flip_rate(preds_a: &[u32], preds_b: &[u32], mask: &[bool]) -> Result<(f64, f64)> {
    if preds_a.len() != preds_b.len() || preds_a.len() != mask.len() {
        return Err(Error::validation("prediction vectors and mask must have equal length"));
    }
    let (mut flips, mut count) = ([0usize; 2], [0usize; 2]);
    for ((a, b), &m) in preds_a.iter().zip(preds_b).zip(mask) {
        let k = usize::from(!m);
        count[k] += 1;
        flips[k] += usize::from(a != b);
    }
    if count.contains(&0) {
        return Err(Error::validation("both the masked subset and its complement must be non-empty"));
    }
    Ok((flips[0] as f64 / count[0] as f64, flips[1] as f64 / count[1] as f64))
}

/// Fitted temperature of `run` at every index, from its `val` tables.
pub fn temperature_trajectory(ctx: &PosthocContext<'_>, run: u32) -> Result<Vec<TemperatureFit>> {
    let tables = ctx.store().require_run(run)?.split_tables(run, "val")?;
    tables.into_iter().map(|t| fit_temperature(t, ctx.opts())).collect()
}

/// Spearman rank correlation, with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::validation("spearman needs two equal-length series of length >= 2"));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(base: &[f64], post: &[f64]) -> CurvePair {
        let idx = (1..=base.len()).map(|i| i as f64).collect();
        CurvePair::new(idx, base.to_vec(), post.to_vec(), MetricKind::Error, TransformKind::Ens).unwrap()
    }

    #[test]
    fn reversal_examples() {
        let r = detect_reversal(&pair(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0])).unwrap();
        assert!(r.reversed);
        assert!(r.witnesses.contains(&(1.0, 3.0)));
        assert_eq!(r.witnesses, vec![(1.0, 2.0), (1.0, 3.0), (2.0, 3.0)]);

        assert!(!detect_reversal(&pair(&[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0])).unwrap().reversed);

        let r = detect_reversal(&pair(&[1.0, 1.0], &[2.0, 1.0])).unwrap();
        assert_eq!(r.witnesses, vec![(2.0, 1.0)]);
        assert!(detect_reversal(&pair(&[1.0], &[1.0])).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(CurvePair::new(vec![1.0, 1.0], vec![0.0; 2], vec![0.0; 2], MetricKind::Loss, TransformKind::Ts).is_err());
        assert!(CurvePair::new(vec![1.0, 2.0], vec![0.0; 2], vec![0.0; 3], MetricKind::Loss, TransformKind::Ts).is_err());
    }

    #[test]
    fn base_curve_orders_by_index() {
        let a = EvalTable::new(2, vec![1.0, 0.0, 1.0, 0.0], vec![0, 1]).unwrap();
        let b = EvalTable::new(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0], vec![0, 1, 0, 1]).unwrap();
        let (i, v) = base_curve(&[(2.0, &b), (1.0, &a)], MetricKind::Error).unwrap();
        assert_eq!(i, vec![1.0, 2.0]);
        assert_eq!(v, vec![0.5, 0.25]);
        let (_, single) = base_curve(&[(1.0, &a)], MetricKind::Error).unwrap();
        assert_eq!(single, vec![0.5]);
    }

    #[test]
    fn flip_rate_examples() {
        let a = [0, 1, 1, 0];
        let b = [0, 0, 1, 1];
        assert!(flip_rate(&a, &b, &[true; 4]).is_err());
        assert_eq!(flip_rate(&a, &b, &[true, true, false, false]).unwrap(), (0.5, 0.5));
        assert_eq!(flip_rate(&a, &a, &[true, true, false, false]).unwrap(), (0.0, 0.0));
        assert_eq!(flip_rate(&a, &[1, 0, 0, 1], &[true, false, true, false]).unwrap(), (1.0, 1.0));
        assert!(flip_rate(&a, &b[..3], &[true; 3]).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
        assert_eq!(swa_prefix_mean(&[1.0, 3.0, 5.0]), vec![1.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn co_monotone_curves_never_reverse(base in prop::collection::vec(-5i32..5, 2..30), scale in 0.1f64..10.0, shift in -3.0f64..3.0) {
            let b: Vec<f64> = base.iter().map(|&v| v as f64).collect();
            let p: Vec<f64> = b.iter().map(|v| v * scale + shift).collect();
            prop_assert!(!detect_reversal(&pair(&b, &p)).unwrap().reversed);
        }

        #[test]
        fn shift_invariance(base in prop::collection::vec(-5i32..5, 2..20), post in prop::collection::vec(-5i32..5, 20), s1 in -50i32..50, s2 in -50i32..50) {
            let b: Vec<f64> = base.iter().map(|&v| v as f64).collect();
            let p: Vec<f64> = post[..b.len()].iter().map(|&v| v as f64).collect();
            let r1 = detect_reversal(&pair(&b, &p)).unwrap();
            let b2: Vec<f64> = b.iter().map(|v| v + s1 as f64).collect();
            let p2: Vec<f64> = p.iter().map(|v| v + s2 as f64).collect();
            prop_assert_eq!(r1, detect_reversal(&pair(&b2, &p2)).unwrap());
        }
    }
}

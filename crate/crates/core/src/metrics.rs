//! Classification error, cross-entropy loss, perplexity and the clean-error
//! variant, all as row-order means accumulated in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::EvalTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Error,
    Loss,
    Perplexity,
    /// Error against a caller-supplied clean label vector.
    CleanError,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Error => "error",
            MetricKind::Loss => "loss",
            MetricKind::Perplexity => "perplexity",
            MetricKind::CleanError => "clean_error",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(MetricKind::Error),
            "loss" => Ok(MetricKind::Loss),
            "perplexity" => Ok(MetricKind::Perplexity),
            "clean_error" | "clean-error" => Ok(MetricKind::CleanError),
            other => Err(Error::validation(format!("unknown metric {other:?}"))),
        }
    }
}

/// A dataset-mean metric value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    pub n: usize,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = k;
        }
    }
    best
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_row(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("softmax input must be non-empty and finite"));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

fn mean_over_rows(t: &EvalTable, labels: &[u32], f: impl Fn(&[f64], usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for (row, &y) in t.rows().zip(labels) {
        acc += f(row, y as usize);
    }
    acc / t.n() as f64
}

fn row_error(z: &[f64], y: usize) -> f64 {
    if argmax(z) == y {
        0.0
    } else {
        1.0
    }
}

fn row_loss(z: &[f64], y: usize) -> f64 {
    log_sum_exp(z) - z[y]
}

pub fn error_metric(t: &EvalTable) -> MetricValue {
    MetricValue { kind: MetricKind::Error, value: mean_over_rows(t, t.labels(), row_error), n: t.n() }
}

pub fn loss_metric(t: &EvalTable) -> MetricValue {
    MetricValue { kind: MetricKind::Loss, value: mean_over_rows(t, t.labels(), row_loss), n: t.n() }
}

pub fn perplexity_metric(loss: &MetricValue) -> Result<MetricValue> {
    if loss.kind != MetricKind::Loss {
        return Err(Error::validation(format!("perplexity needs a loss value, got {}", loss.kind)));
    }
    Ok(MetricValue { kind: MetricKind::Perplexity, value: loss.value.exp(), n: loss.n })
}

pub fn clean_error_metric(t: &EvalTable, clean_labels: &[u32]) -> Result<MetricValue> {
    if clean_labels.len() != t.n() {
        return Err(Error::validation(format!(
            "clean label vector has {} entries, table has {} rows",
            clean_labels.len(),
            t.n()
        )));
    }
    if clean_labels.iter().any(|&y| y as usize >= t.c()) {
        return Err(Error::validation("clean label out of class range"));
    }
    Ok(MetricValue {
        kind: MetricKind::CleanError,
        value: mean_over_rows(t, clean_labels, row_error),
        n: t.n(),
    })
}

/// Computes `kind` on `t`. `clean_labels` is required for [`MetricKind::CleanError`] only.
pub fn evaluate(t: &EvalTable, kind: MetricKind, clean_labels: Option<&[u32]>) -> Result<MetricValue> {
    match kind {
        MetricKind::Error => Ok(error_metric(t)),
        MetricKind::Loss => Ok(loss_metric(t)),
        MetricKind::Perplexity => perplexity_metric(&loss_metric(t)),
        MetricKind::CleanError => {
            let clean = clean_labels.ok_or_else(|| Error::validation("clean_error needs clean labels"))?;
            clean_error_metric(t, clean)
        }
    }
}

/// `kind` evaluated separately on the rows where `mask` is true and on the rest.
pub fn subset_metrics(
    t: &EvalTable,
    mask: &[bool],
    kind: MetricKind,
    clean_labels: Option<&[u32]>,
) -> Result<(MetricValue, MetricValue)> {
    if mask.len() != t.n() {
        return Err(Error::validation(format!("mask has {} entries, table has {} rows", mask.len(), t.n())));
    }
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..t.n()).partition(|&i| mask[i]);
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::validation("both the masked subset and its complement must be non-empty"));
    }
    let pick = |rows: &[usize]| -> Result<MetricValue> {
        let sub = t.select_rows(rows)?;
        let clean: Option<Vec<u32>> = clean_labels
            .map(|c| {
                if c.len() != t.n() {
                    return Err(Error::validation("clean label vector length differs from row count"));
                }
                Ok(rows.iter().map(|&r| c[r]).collect())
            })
            .transpose()?;
        evaluate(&sub, kind, clean.as_deref())
    };
    Ok((pick(&inside)?, pick(&outside)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]], labels: &[u32]) -> EvalTable {
        EvalTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), labels.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_row(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_row(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_row(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(softmax_row(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn error_examples() {
        assert_eq!(error_metric(&t(&[&[2.0, 1.0], &[0.0, 3.0]], &[0, 0])).value, 0.5);
        assert_eq!(error_metric(&t(&[&[1.0, 1.0]], &[0])).value, 0.0);
        assert_eq!(error_metric(&t(&[&[1.0, 1.0]], &[1])).value, 1.0);
    }

    #[test]
    fn loss_examples() {
        assert!((loss_metric(&t(&[&[0.0, 0.0]], &[0])).value - 2f64.ln()).abs() < 1e-15);
        assert!((loss_metric(&t(&[&[3f64.ln(), 0.0]], &[0])).value - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((loss_metric(&t(&[&[0.0; 4]], &[2])).value - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perplexity_examples() {
        let l = |v: f64| MetricValue { kind: MetricKind::Loss, value: v, n: 1 };
        assert!((perplexity_metric(&l(2f64.ln())).unwrap().value - 2.0).abs() < 1e-15);
        assert_eq!(perplexity_metric(&l(0.0)).unwrap().value, 1.0);
        assert!((perplexity_metric(&l(4f64.ln())).unwrap().value - 4.0).abs() < 1e-14);
        let e = MetricValue { kind: MetricKind::Error, value: 0.1, n: 1 };
        assert!(perplexity_metric(&e).is_err());
    }

    #[test]
    fn clean_error_uses_alternate_labels() {
        let tab = t(&[&[2.0, 0.0], &[0.0, 2.0]], &[1, 1]);
        assert_eq!(error_metric(&tab).value, 0.5);
        assert_eq!(clean_error_metric(&tab, &[0, 1]).unwrap().value, 0.0);
        assert!(evaluate(&tab, MetricKind::CleanError, None).is_err());
        assert!(clean_error_metric(&tab, &[0]).is_err());
    }

    #[test]
    fn subset_examples() {
        let tab = t(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]], &[0, 1, 1, 0]);
        let (a, b) = subset_metrics(&tab, &[true, true, false, false], MetricKind::Error, None).unwrap();
        assert_eq!((a.value, b.value), (0.0, 1.0));
        assert!(subset_metrics(&tab, &[true; 4], MetricKind::Error, None).is_err());
        assert!(subset_metrics(&tab, &[false; 4], MetricKind::Error, None).is_err());
    }

    #[test]
    fn loss_equals_entropy_at_true_conditional() {
        // Logits are log-probabilities of the empirical conditional (3 of 4 rows label 0).
        let p = [0.75f64, 0.25];
        let z = [p[0].ln(), p[1].ln()];
        let tab = t(&[&z, &z, &z, &z], &[0, 0, 0, 1]);
        let entropy = -(p[0] * p[0].ln() + p[1] * p[1].ln());
        assert!((loss_metric(&tab).value - entropy).abs() < 1e-15);
    }

    fn table_strategy() -> impl Strategy<Value = EvalTable> {
        (2usize..6, 2usize..40).prop_flat_map(|(c, n)| {
            (prop::collection::vec(-20.0f64..20.0, n * c), prop::collection::vec(0..c as u32, n))
                .prop_map(move |(z, y)| EvalTable::new(c, z, y).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in prop::collection::vec(-1e4f64..1e4, 1..12)) {
            let p = softmax_row(&z).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn loss_is_nonnegative(tab in table_strategy()) {
            prop_assert!(loss_metric(&tab).value >= 0.0);
            let e = error_metric(&tab).value;
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn subset_means_decompose(tab in table_strategy(), bits in prop::collection::vec(any::<bool>(), 40)) {
            let mut mask: Vec<bool> = bits[..tab.n()].to_vec();
            mask[0] = true;
            mask[1] = false;
            for kind in [MetricKind::Loss, MetricKind::Error] {
                let (a, b) = subset_metrics(&tab, &mask, kind, None).unwrap();
                let total = evaluate(&tab, kind, None).unwrap();
                let lhs = a.n as f64 * a.value + b.n as f64 * b.value;
                let rhs = tab.n() as f64 * total.value;
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
            }
        }
    }
}

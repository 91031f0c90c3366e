//! Post-hoc transforms: temperature scaling, logit ensembling, stochastic
//! weight averaging and their compositions SWA+TS and SWA+Ens+TS.

mod context;

pub use context::{PosthocContext, SwaTrajectory, Transformed, SWA_SPLIT_PREFIX};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_temperature, fit_temperature, FitOptions, TemperatureFit};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::store::{CheckpointTensors, EvalTable, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransformKind {
    #[serde(rename = "TS")]
    Ts,
    #[serde(rename = "Ens")]
    Ens,
    #[serde(rename = "SWA")]
    Swa,
    #[serde(rename = "SWA_TS")]
    SwaTs,
    #[serde(rename = "SWA_Ens_TS")]
    SwaEnsTs,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] =
        [TransformKind::Ts, TransformKind::Ens, TransformKind::Swa, TransformKind::SwaTs, TransformKind::SwaEnsTs];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Ts => "TS",
            TransformKind::Ens => "Ens",
            TransformKind::Swa => "SWA",
            TransformKind::SwaTs => "SWA_TS",
            TransformKind::SwaEnsTs => "SWA_Ens_TS",
        }
    }

    /// True for transforms that combine several runs.
    pub fn is_ensemble(self) -> bool {
        matches!(self, TransformKind::Ens | TransformKind::SwaEnsTs)
    }

    pub fn uses_swa(self) -> bool {
        matches!(self, TransformKind::Swa | TransformKind::SwaTs | TransformKind::SwaEnsTs)
    }
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "ts" => Ok(TransformKind::Ts),
            "ens" => Ok(TransformKind::Ens),
            "swa" => Ok(TransformKind::Swa),
            "swa_ts" => Ok(TransformKind::SwaTs),
            "swa_ens_ts" => Ok(TransformKind::SwaEnsTs),
            _ => Err(Error::validation(format!("unknown transform {s:?}"))),
        }
    }
}

/// Checkpoints of one run that feed a transform: indices `first..=last`
/// (a single index unless SWA is involved).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberRange {
    pub run: u32,
    pub first: f64,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Per-member temperatures, in member order. Empty when no member is scaled.
    pub member_temps: Vec<f64>,
    /// Outer temperature of SWA+Ens+TS.
    pub ensemble_temp: Option<f64>,
    pub members: Vec<MemberRange>,
}

/// Averages temperature-scaled logits: `(1/K) * sum_k logits_k / temps[k]`, in member order.
pub fn ensemble_logits(tables: &[&EvalTable], temps: &[f64]) -> Result<EvalTable> {
    let first = *tables.first().ok_or_else(|| Error::validation("ensemble needs at least one member"))?;
    if temps.len() != tables.len() {
        return Err(Error::validation(format!("{} temperatures for {} members", temps.len(), tables.len())));
    }
    if let Some(tau) = temps.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::validation(format!("member temperature must be positive, got {tau}")));
    }
    for (k, t) in tables.iter().enumerate().skip(1) {
        if (t.n(), t.c()) != (first.n(), first.c()) {
            return Err(Error::validation(format!("ensemble member {k} has a different shape")));
        }
        if t.labels() != first.labels() {
            return Err(Error::validation(format!("ensemble member {k} has different labels")));
        }
    }
    let mut acc = vec![0.0; first.logits().len()];
    for (t, &tau) in tables.iter().zip(temps) {
        let inv = 1.0 / tau;
        for (a, &v) in acc.iter_mut().zip(t.logits()) {
            *a += inv * v;
        }
    }
    let k = tables.len() as f64;
    acc.iter_mut().for_each(|v| *v /= k);
    first.with_logits(acc)
}

/// Elementwise arithmetic mean of checkpoints with identical schema.
pub fn swa_mean(checkpoints: &[&CheckpointTensors]) -> Result<CheckpointTensors> {
    let first = *checkpoints.first().ok_or_else(|| Error::validation("SWA needs at least one checkpoint"))?;
    for c in &checkpoints[1..] {
        first.check_schema(c)?;
    }
    let k = checkpoints.len() as f64;
    let tensors = first
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut acc = vec![0.0; t.data.len()];
            for c in checkpoints {
                for (a, v) in acc.iter_mut().zip(&c.tensors()[i].data) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|v| *v /= k);
            Tensor::new(t.name.clone(), t.shape.clone(), acc)
        })
        .collect();
    CheckpointTensors::new(tensors)
}

/// Running weight average: `mean += (new - mean) / (count + 1)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SwaState {
    mean: Option<CheckpointTensors>,
    count: usize,
}

impl SwaState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mean(&self) -> Option<&CheckpointTensors> {
        self.mean.as_ref()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn absorb(&mut self, new: &CheckpointTensors) -> Result<()> {
        match &mut self.mean {
            None => self.mean = Some(new.clone()),
            Some(mean) => {
                mean.check_schema(new)?;
                let denom = (self.count + 1) as f64;
                let mut tensors = std::mem::take(mean).into_tensors();
                for (m, n) in tensors.iter_mut().zip(new.tensors()) {
                    for (a, b) in m.data.iter_mut().zip(&n.data) {
                        *a += (b - *a) / denom;
                    }
                }
                *mean = CheckpointTensors::new(tensors)?;
            }
        }
        self.count += 1;
        Ok(())
    }
}

pub fn swa_update(mut state: SwaState, new: &CheckpointTensors) -> Result<SwaState> {
    state.absorb(new)?;
    Ok(state)
}

/// Val and test tables after a composed transform, with the fitted temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedOutput {
    pub spec: TransformSpec,
    pub val: EvalTable,
    pub test: EvalTable,
    pub member_fits: Vec<TemperatureFit>,
    pub ensemble_fit: Option<TemperatureFit>,
}

/// Temperature-scales a model's tables using the temperature fitted on `val`.
pub fn ts_tables(
    tables: &BTreeMap<String, EvalTable>,
    opts: &FitOptions,
) -> Result<(TemperatureFit, BTreeMap<String, EvalTable>)> {
    let val = tables.get("val").ok_or_else(|| Error::validation("temperature fit needs a \"val\" table"))?;
    let fit = fit_temperature(val, opts)?;
    let out = tables
        .iter()
        .map(|(k, t)| Ok((k.clone(), apply_temperature(t, fit.tau)?)))
        .collect::<Result<_>>()?;
    Ok((fit, out))
}

/// The SWA+Ens+TS nesting on already evaluated members: fit `tau_l` per member
/// on val, average the scaled logits, then fit and apply `tau_Ens`.
pub fn ens_ts_tables(
    members: &[&BTreeMap<String, EvalTable>],
    opts: &FitOptions,
) -> Result<(Vec<TemperatureFit>, TemperatureFit, BTreeMap<String, EvalTable>)> {
    let (fits, ensembled) = ens_tables(members, opts)?;
    let (outer, out) = ts_tables(&ensembled, opts)?;
    Ok((fits, outer, out))
}

/// Ensemble with per-member temperatures fitted on val, without an outer temperature.
pub fn ens_tables(
    members: &[&BTreeMap<String, EvalTable>],
    opts: &FitOptions,
) -> Result<(Vec<TemperatureFit>, BTreeMap<String, EvalTable>)> {
    let first = members.first().ok_or_else(|| Error::validation("ensemble needs at least one member"))?;
    let fits = members
        .iter()
        .map(|m| {
            let val = m.get("val").ok_or_else(|| Error::validation("ensemble member has no \"val\" table"))?;
            fit_temperature(val, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let temps: Vec<f64> = fits.iter().map(|f| f.tau).collect();
    let mut out = BTreeMap::new();
    for split in first.keys() {
        let tables = members
            .iter()
            .map(|m| m.get(split).ok_or_else(|| Error::validation(format!("ensemble member lacks split {split:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(split.clone(), ensemble_logits(&tables, &temps)?);
    }
    Ok((fits, out))
}

fn evaluate_val_test(evaluator: &dyn Evaluator, ck: &CheckpointTensors) -> Result<BTreeMap<String, EvalTable>> {
    Ok(BTreeMap::from([
        ("val".to_string(), evaluator.evaluate(ck, "val")?),
        ("test".to_string(), evaluator.evaluate(ck, "test")?),
    ]))
}

fn take_val_test(mut m: BTreeMap<String, EvalTable>) -> (EvalTable, EvalTable) {
    let val = m.remove("val").expect("val table");
    let test = m.remove("test").expect("test table");
    (val, test)
}

/// SWA over `prefix`, evaluated on val and test, then temperature-scaled with
/// the temperature fitted on val.
pub fn compose_swa_ts(
    prefix: &[&CheckpointTensors],
    evaluator: &dyn Evaluator,
    opts: &FitOptions,
) -> Result<ComposedOutput> {
    let avg = swa_mean(prefix)?;
    let (fit, out) = ts_tables(&evaluate_val_test(evaluator, &avg)?, opts)?;
    let (val, test) = take_val_test(out);
    Ok(ComposedOutput {
        spec: TransformSpec {
            kind: TransformKind::SwaTs,
            member_temps: vec![fit.tau],
            ensemble_temp: None,
            members: Vec::new(),
        },
        val,
        test,
        member_fits: vec![fit],
        ensemble_fit: None,
    })
}

/// `(1/tau_Ens) * (1/L) * sum_l (1/tau_l) * f(x; mean of run l's prefix)`.
pub fn compose_swa_ens_ts(
    runs: &[Vec<&CheckpointTensors>],
    evaluator: &dyn Evaluator,
    opts: &FitOptions,
) -> Result<ComposedOutput> {
    if runs.is_empty() {
        return Err(Error::validation("SWA+Ens+TS needs at least one run"));
    }
    let evaluated = runs
        .iter()
        .map(|prefix| evaluate_val_test(evaluator, &swa_mean(prefix)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&BTreeMap<String, EvalTable>> = evaluated.iter().collect();
    let (fits, outer, out) = ens_ts_tables(&refs, opts)?;
    let (val, test) = take_val_test(out);
    Ok(ComposedOutput {
        spec: TransformSpec {
            kind: TransformKind::SwaEnsTs,
            member_temps: fits.iter().map(|f| f.tau).collect(),
            ensemble_temp: Some(outer.tau),
            members: Vec::new(),
        },
        val,
        test,
        member_fits: fits,
        ensemble_fit: Some(outer),
    })
}

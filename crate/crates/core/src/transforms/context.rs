use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::{ens_tables, ens_ts_tables, ts_tables, MemberRange, SwaState, TransformKind, TransformSpec};
use crate::calibrate::FitOptions;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::metrics::{evaluate, MetricKind, MetricValue};
use crate::store::{format_index, EvalTable, RunStore};

/// Splits named `swa-<split>` hold externally evaluated SWA models: the table
/// at index `t` is the model averaged over the run's checkpoints up to `t`.
pub const SWA_SPLIT_PREFIX: &str = "swa-";

/// Evaluated SWA models of one run, one per prefix of its checkpoint list.
#[derive(Debug, Clone)]
pub struct SwaTrajectory {
    pub run: u32,
    pub indices: Vec<f64>,
    pub tables: Vec<BTreeMap<String, EvalTable>>,
}

/// Tables produced by a transform, keyed by split.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub spec: TransformSpec,
    pub tables: BTreeMap<String, EvalTable>,
}

impl Transformed {
    pub fn table(&self, split: &str) -> Result<&EvalTable> {
        self.tables
            .get(split)
            .ok_or_else(|| Error::validation(format!("transform output has no {split:?} split")))
    }

    pub fn metric(&self, split: &str, kind: MetricKind) -> Result<MetricValue> {
        evaluate(self.table(split)?, kind, None)
    }
}

/// Builds transformed models from a run store using the index maps
/// `TS(t) = (theta_t)`, `Ens(t) = (theta_t^1..theta_t^N)`, `SWA(t) = (theta_1..theta_t)`.
///
/// SWA trajectories are computed once per run and cached.
pub struct PosthocContext<'a> {
    store: &'a RunStore,
    evaluator: Option<&'a dyn Evaluator>,
    opts: FitOptions,
    splits: Vec<String>,
    swa: RefCell<BTreeMap<u32, Rc<SwaTrajectory>>>,
}

impl<'a> PosthocContext<'a> {
    /// Carries the store's `val` and `test` splits; add others with [`PosthocContext::with_splits`].
    pub fn new(store: &'a RunStore, evaluator: Option<&'a dyn Evaluator>, opts: FitOptions) -> Self {
        let splits = store
            .splits()
            .into_iter()
            .filter(|s| matches!(s.as_str(), "val" | "test"))
            .collect();
        PosthocContext { store, evaluator, opts, splits, swa: RefCell::new(BTreeMap::new()) }
    }

    /// Restricts the splits carried through transforms. `val` is always kept.
    pub fn with_splits(mut self, splits: &[&str]) -> Self {
        let mut s: Vec<String> = splits.iter().map(|s| s.to_string()).collect();
        if !s.iter().any(|x| x == "val") {
            s.push("val".into());
        }
        s.sort();
        self.splits = s;
        self.swa.borrow_mut().clear();
        self
    }

    pub fn store(&self) -> &'a RunStore {
        self.store
    }

    pub fn opts(&self) -> &FitOptions {
        &self.opts
    }

    pub fn splits(&self) -> &[String] {
        &self.splits
    }

    fn index_of(&self, run: u32, pos: usize) -> Result<f64> {
        let r = self.store.require_run(run)?;
        r.entries()
            .get(pos)
            .map(|e| e.index)
            .ok_or_else(|| Error::validation(format!("run {run} has no checkpoint at position {pos}")))
    }

    pub fn base_tables(&self, run: u32, pos: usize) -> Result<BTreeMap<String, EvalTable>> {
        let index = self.index_of(run, pos)?;
        let entry = &self.store.require_run(run)?.entries()[pos];
        self.splits
            .iter()
            .map(|s| {
                entry.tables.get(s).cloned().map(|t| (s.clone(), t)).ok_or_else(|| {
                    Error::validation(format!("run {run} index {}: missing {s:?} table", format_index(index)))
                })
            })
            .collect()
    }

    pub fn swa_trajectory(&self, run: u32) -> Result<Rc<SwaTrajectory>> {
        if let Some(t) = self.swa.borrow().get(&run) {
            return Ok(Rc::clone(t));
        }
        let traj = Rc::new(self.compute_swa(run)?);
        self.swa.borrow_mut().insert(run, Rc::clone(&traj));
        Ok(traj)
    }

    fn compute_swa(&self, run: u32) -> Result<SwaTrajectory> {
        let r = self.store.require_run(run)?;
        let indices = r.indices();
        let has_ckpts = r.entries().iter().all(|e| e.checkpoint.is_some());
        let has_tables = r.entries().iter().all(|e| {
            self.splits.iter().all(|s| e.tables.contains_key(&format!("{SWA_SPLIT_PREFIX}{s}")))
        });
        if let (Some(ev), true, false) = (self.evaluator, has_ckpts, has_tables) {
            let mut state = SwaState::new();
            let mut tables = Vec::with_capacity(r.len());
            for e in r.entries() {
                state.absorb(e.checkpoint.as_ref().expect("checked above"))?;
                let avg = state.mean().expect("non-empty");
                let t = self
                    .splits
                    .iter()
                    .map(|s| Ok((s.clone(), ev.evaluate(avg, s)?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                tables.push(t);
            }
            return Ok(SwaTrajectory { run, indices, tables });
        }
        let mut tables = Vec::with_capacity(r.len());
        for e in r.entries() {
            let mut t = BTreeMap::new();
            for s in &self.splits {
                let key = format!("{SWA_SPLIT_PREFIX}{s}");
                let tab = e.tables.get(&key).ok_or_else(|| {
                    let why = if e.checkpoint.is_none() { "no checkpoint" } else { "no evaluator" };
                    Error::validation(format!(
                        "SWA slot run {run} index {}: {why} and no {key:?} table",
                        format_index(e.index)
                    ))
                })?;
                t.insert(s.clone(), tab.clone());
            }
            tables.push(t);
        }
        Ok(SwaTrajectory { run, indices, tables })
    }

    fn single(kind: TransformKind, run: u32, first: f64, last: f64, temps: Vec<f64>) -> TransformSpec {
        TransformSpec { kind, member_temps: temps, ensemble_temp: None, members: vec![MemberRange { run, first, last }] }
    }

    pub fn ts(&self, run: u32, pos: usize) -> Result<Transformed> {
        let index = self.index_of(run, pos)?;
        let (fit, tables) = ts_tables(&self.base_tables(run, pos)?, &self.opts)?;
        Ok(Transformed { spec: Self::single(TransformKind::Ts, run, index, index, vec![fit.tau]), tables })
    }

    pub fn swa(&self, run: u32, pos: usize) -> Result<Transformed> {
        let index = self.index_of(run, pos)?;
        let traj = self.swa_trajectory(run)?;
        Ok(Transformed {
            spec: Self::single(TransformKind::Swa, run, traj.indices[0], index, Vec::new()),
            tables: traj.tables[pos].clone(),
        })
    }

    pub fn swa_ts(&self, run: u32, pos: usize) -> Result<Transformed> {
        let index = self.index_of(run, pos)?;
        let traj = self.swa_trajectory(run)?;
        let (fit, tables) = ts_tables(&traj.tables[pos], &self.opts)?;
        Ok(Transformed { spec: Self::single(TransformKind::SwaTs, run, traj.indices[0], index, vec![fit.tau]), tables })
    }

    /// Ensemble of `(run, position)` members with per-member temperatures.
    pub fn ens(&self, members: &[(u32, usize)]) -> Result<Transformed> {
        let mut ordered = members.to_vec();
        ordered.sort_unstable();
        let tables = ordered.iter().map(|&(r, p)| self.base_tables(r, p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = tables.iter().collect();
        let (fits, out) = ens_tables(&refs, &self.opts)?;
        let ranges = ordered
            .iter()
            .map(|&(run, p)| self.index_of(run, p).map(|i| MemberRange { run, first: i, last: i }))
            .collect::<Result<_>>()?;
        Ok(Transformed {
            spec: TransformSpec {
                kind: TransformKind::Ens,
                member_temps: fits.iter().map(|f| f.tau).collect(),
                ensemble_temp: None,
                members: ranges,
            },
            tables: out,
        })
    }

    /// SWA+Ens+TS where run `r` contributes its prefix ending at position `p`.
    /// Members are reduced in ascending run order.
    pub fn swa_ens_ts(&self, members: &[(u32, usize)]) -> Result<Transformed> {
        let mut ordered = members.to_vec();
        ordered.sort_unstable();
        let trajs = ordered.iter().map(|&(r, _)| self.swa_trajectory(r)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&BTreeMap<String, EvalTable>> = trajs
            .iter()
            .zip(&ordered)
            .map(|(t, &(run, p))| {
                t.tables
                    .get(p)
                    .ok_or_else(|| Error::validation(format!("run {run} has no checkpoint at position {p}")))
            })
            .collect::<Result<_>>()?;
        let (fits, outer, tables) = ens_ts_tables(&refs, &self.opts)?;
        let ranges = trajs
            .iter()
            .zip(&ordered)
            .map(|(t, &(run, p))| MemberRange { run, first: t.indices[0], last: t.indices[p] })
            .collect();
        Ok(Transformed {
            spec: TransformSpec {
                kind: TransformKind::SwaEnsTs,
                member_temps: fits.iter().map(|f| f.tau).collect(),
                ensemble_temp: Some(outer.tau),
                members: ranges,
            },
            tables,
        })
    }

    /// Dispatches on `kind`. Single-model kinds take exactly one member.
    pub fn transform(&self, kind: TransformKind, members: &[(u32, usize)]) -> Result<Transformed> {
        if !kind.is_ensemble() && members.len() != 1 {
            return Err(Error::validation(format!("{kind} takes exactly one member, got {}", members.len())));
        }
        if members.is_empty() {
            return Err(Error::validation(format!("{kind} needs at least one member")));
        }
        let (run, pos) = members[0];
        match kind {
            TransformKind::Ts => self.ts(run, pos),
            TransformKind::Swa => self.swa(run, pos),
            TransformKind::SwaTs => self.swa_ts(run, pos),
            TransformKind::Ens => self.ens(members),
            TransformKind::SwaEnsTs => self.swa_ens_ts(members),
        }
    }
}

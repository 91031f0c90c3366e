//! Directory layout of a run store:
//!
//! ```text
//! <root>/run-<j>/ckpt-<index>.json   checkpoint manifest
//! <root>/run-<j>/ckpt-<index>.f32    checkpoint blob
//! <root>/run-<j>/<split>-<index>.phe eval bundle
//! ```
//!
//! Indices are written with at most 3 decimals and no trailing zeros.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    read_checkpoint, read_eval_table, write_checkpoint, write_eval_table, CheckpointIndex, CheckpointTensors, RunStore,
};
use crate::error::{Error, Result};

pub fn format_index(index: f64) -> String {
    let s = format!("{index:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

pub fn parse_index(s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::format(format!("bad checkpoint index {s:?}")))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::format(format!("checkpoint index {s:?} is not positive")))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn name_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn save_store(store: &RunStore, root: &Path) -> Result<()> {
    for (run_id, run) in store.runs() {
        let dir = root.join(format!("run-{run_id}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for e in run.entries() {
            let idx = format_index(e.index);
            if parse_index(&idx)? != e.index {
                return Err(Error::validation(format!(
                    "index {} of run {run_id} needs more than 3 decimals",
                    e.index
                )));
            }
            if let Some(ck) = &e.checkpoint {
                let (m, b) = write_checkpoint(ck)?;
                write(&dir.join(format!("ckpt-{idx}.json")), &m)?;
                write(&dir.join(format!("ckpt-{idx}.f32")), &b)?;
            }
            for (split, t) in &e.tables {
                write(&dir.join(format!("{split}-{idx}.phe")), &write_eval_table(t)?)?;
            }
        }
    }
    Ok(())
}

#[derive(Default)]
struct Pending {
    ckpt: Option<PathBuf>,
    tables: BTreeMap<String, PathBuf>,
}

pub fn load_store(root: &Path) -> Result<RunStore> {
    let mut runs: BTreeMap<u32, Vec<(f64, Pending)>> = BTreeMap::new();
    let listing = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for ent in listing {
        let ent = ent.map_err(|e| Error::io(root, e))?;
        let name = ent.file_name().to_string_lossy().into_owned();
        let Some(id) = name.strip_prefix("run-") else { continue };
        let run_id: u32 = id
            .parse()
            .map_err(|_| Error::format(format!("{}: bad run directory name", ent.path().display())))?;
        let slots = runs.entry(run_id).or_default();
        let dir = ent.path();
        for f in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = f.map_err(|e| Error::io(&dir, e))?.path();
            let fname = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let (stem, kind) = match fname.rsplit_once('.') {
                Some((stem, "phe")) => (stem.to_string(), "phe"),
                Some((stem, "json")) if stem.starts_with("ckpt-") => (stem.to_string(), "ckpt"),
                _ => continue,
            };
            let (prefix, idx) = stem
                .rsplit_once('-')
                .ok_or_else(|| Error::format(format!("{}: expected <name>-<index>", path.display())))?;
            let index = parse_index(idx).map_err(|e| name_file(&path, e))?;
            let pos = match slots.iter().position(|(i, _)| *i == index) {
                Some(p) => p,
                None => {
                    slots.push((index, Pending::default()));
                    slots.len() - 1
                }
            };
            if kind == "ckpt" {
                slots[pos].1.ckpt = Some(path);
            } else {
                slots[pos].1.tables.insert(prefix.to_string(), path);
            }
        }
    }

    let mut store = RunStore::new();
    for (run_id, mut slots) in runs {
        slots.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (index, p) in slots {
            let checkpoint = match &p.ckpt {
                Some(m) => {
                    let blob_path = m.with_extension("f32");
                    Some(read_checkpoint(&read(m)?, &read(&blob_path)?).map_err(|e| name_file(m, e))?)
                }
                None => None,
            };
            let mut tables = BTreeMap::new();
            for (split, path) in &p.tables {
                tables.insert(split.clone(), read_eval_table(&read(path)?).map_err(|e| name_file(path, e))?);
            }
            let at = CheckpointIndex { run: run_id, index };
            store.insert(at, checkpoint, tables).map_err(|e| {
                name_file(&root.join(format!("run-{run_id}")).join(format_index(index)), e)
            })?;
        }
    }
    if store.is_empty() {
        return Err(Error::format(format!("{}: no run-<j> directories found", root.display())));
    }
    Ok(store)
}

/// Checkpoints found in one `run-<j>` directory, ordered by index.
pub fn load_run_checkpoints(run_dir: &Path) -> Result<Vec<(f64, CheckpointTensors)>> {
    let mut out = Vec::new();
    for f in fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))? {
        let path = f.map_err(|e| Error::io(run_dir, e))?.path();
        let fname = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(idx) = fname.strip_prefix("ckpt-").and_then(|r| r.strip_suffix(".json")) else { continue };
        let index = parse_index(idx).map_err(|e| name_file(&path, e))?;
        let ck = read_checkpoint(&read(&path)?, &read(&path.with_extension("f32"))?).map_err(|e| name_file(&path, e))?;
        out.push((index, ck));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{CheckpointTensors, EvalTable, Tensor};

    #[test]
    fn index_formatting() {
        assert_eq!(format_index(10.0), "10");
        assert_eq!(format_index(0.7), "0.7");
        assert_eq!(format_index(1.25), "1.25");
        assert_eq!(format_index(2.1234), "2.123");
        assert_eq!(parse_index("0.7").unwrap(), 0.7);
        assert!(parse_index("0").is_err());
        assert!(parse_index("abc").is_err());
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = RunStore::new();
        for run in 1..=2u32 {
            for (k, index) in [0.7, 1.4, 10.0].into_iter().enumerate() {
                let ck = CheckpointTensors::new(vec![Tensor::new("w", vec![2], vec![k as f64, run as f64])]).unwrap();
                let t = EvalTable::new(2, vec![k as f64, 0.5, 1.0, -2.0], vec![0, 1]).unwrap();
                let tables = BTreeMap::from([("val".into(), t.clone()), ("swa-val".into(), t)]);
                s.insert(CheckpointIndex { run, index }, Some(ck), tables).unwrap();
            }
        }
        save_store(&s, dir.path()).unwrap();
        assert!(dir.path().join("run-2/ckpt-0.7.f32").exists());
        assert!(dir.path().join("run-1/swa-val-10.phe").exists());
        let back = load_store(dir.path()).unwrap();
        assert_eq!(back.run_ids(), vec![1, 2]);
        let r = back.run(2).unwrap();
        assert_eq!(r.indices(), vec![0.7, 1.4, 10.0]);
        assert_eq!(r.entries()[2].checkpoint, s.run(2).unwrap().entries()[2].checkpoint);
        assert_eq!(r.entries()[1].tables, s.run(2).unwrap().entries()[1].tables);
    }

    #[test]
    fn load_names_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("run-1")).unwrap();
        fs::write(dir.path().join("run-1/val-1.phe"), b"garbage").unwrap();
        let err = load_store(dir.path()).unwrap_err().to_string();
        assert!(err.contains("val-1.phe"), "{err}");
    }
}

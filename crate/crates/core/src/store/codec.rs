//! Bit-exact codecs.
//!
//! Eval bundle: `PHEVAL01`, u32 N, u32 C, N*C f32 logits (row-major), N u32 labels.
//! Checkpoint: JSON manifest plus a blob of little-endian f32 values.

use serde::{Deserialize, Serialize};

use super::{CheckpointTensors, EvalTable, Tensor};
use crate::error::{Error, Result};

pub const EVAL_MAGIC: &[u8; 8] = b"PHEVAL01";

fn narrow(v: f64, what: &str) -> Result<f32> {
    let x = v as f32;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::validation(format!("{what} value {v} does not fit in a 32-bit float")))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(format!("stream truncated while reading {what}")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_eval_table(bytes: &[u8]) -> Result<EvalTable> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != EVAL_MAGIC {
        return Err(Error::format("bad magic, expected PHEVAL01"));
    }
    let n = r.u32("row count")? as usize;
    let c = r.u32("class count")? as usize;
    let cells = n
        .checked_mul(c)
        .ok_or_else(|| Error::format("row x class count overflows"))?;
    let expected = cells
        .checked_mul(4)
        .and_then(|v| v.checked_add(n * 4))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| Error::format("declared size overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "eval bundle for {n}x{c} must be {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let logits = r
        .take(cells * 4, "logits")?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let labels = r
        .take(n * 4, "labels")?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    EvalTable::new(c, logits, labels)
}

pub fn write_eval_table(t: &EvalTable) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * t.n() * (t.c() + 1));
    out.extend_from_slice(EVAL_MAGIC);
    out.extend_from_slice(&(t.n() as u32).to_le_bytes());
    out.extend_from_slice(&(t.c() as u32).to_le_bytes());
    for &v in t.logits() {
        out.extend_from_slice(&narrow(v, "logit")?.to_le_bytes());
    }
    for &y in t.labels() {
        out.extend_from_slice(&y.to_le_bytes());
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    total_elems: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<u32>,
    offset_elems: u64,
}

pub fn read_checkpoint(manifest: &[u8], blob: &[u8]) -> Result<CheckpointTensors> {
    let m: Manifest =
        serde_json::from_slice(manifest).map_err(|e| Error::format(format!("bad checkpoint manifest: {e}")))?;
    let total = m.total_elems as usize;
    if blob.len() != total * 4 {
        return Err(Error::format(format!(
            "blob has {} bytes, manifest declares {} elements ({} bytes)",
            blob.len(),
            total,
            total * 4
        )));
    }
    let mut ranges: Vec<(usize, usize, &str)> = Vec::with_capacity(m.tensors.len());
    for e in &m.tensors {
        let len = e.shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let start = e.offset_elems as usize;
        let end = len.and_then(|l| start.checked_add(l));
        match end {
            Some(end) if end <= total => ranges.push((start, end, &e.name)),
            _ => return Err(Error::format(format!("tensor {:?} extends past total_elems", e.name))),
        }
    }
    let mut sorted = ranges.clone();
    sorted.sort_by_key(|&(s, e, _)| (s, e));
    for w in sorted.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::format(format!("tensors {:?} and {:?} overlap", w[0].2, w[1].2)));
        }
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let spans: Vec<(usize, usize)> = ranges.iter().map(|&(s, e, _)| (s, e)).collect();
    let tensors = m
        .tensors
        .into_iter()
        .zip(spans)
        .map(|(e, (s, end))| Tensor::new(e.name, e.shape, values[s..end].to_vec()))
        .collect();
    CheckpointTensors::new(tensors)
}

pub fn write_checkpoint(c: &CheckpointTensors) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut blob = Vec::with_capacity(c.total_elems() * 4);
    let mut entries = Vec::with_capacity(c.tensors().len());
    let mut offset = 0u64;
    for t in c.tensors() {
        entries.push(ManifestEntry { name: t.name.clone(), shape: t.shape.clone(), offset_elems: offset });
        for &v in &t.data {
            blob.extend_from_slice(&narrow(v, &t.name)?.to_le_bytes());
        }
        offset += t.data.len() as u64;
    }
    let manifest = serde_json::to_vec(&Manifest { tensors: entries, total_elems: offset })?;
    Ok((manifest, blob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundle(n: u32, c: u32, logits: &[f32], labels: &[u32]) -> Vec<u8> {
        let mut b = EVAL_MAGIC.to_vec();
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&c.to_le_bytes());
        logits.iter().for_each(|v| b.extend_from_slice(&v.to_le_bytes()));
        labels.iter().for_each(|v| b.extend_from_slice(&v.to_le_bytes()));
        b
    }

    #[test]
    fn minimal_bundle() {
        let b = bundle(1, 2, &[0.0, 0.0], &[0]);
        assert_eq!(b.len(), 28);
        let t = read_eval_table(&b).unwrap();
        assert_eq!((t.n(), t.c()), (1, 2));
        assert_eq!(write_eval_table(&t).unwrap(), b);
    }

    #[test]
    fn bundle_size_arithmetic() {
        let t = EvalTable::new(4, vec![0.5; 12], vec![0, 1, 3]).unwrap();
        assert_eq!(write_eval_table(&t).unwrap().len(), 76);
    }

    #[test]
    fn bundle_errors() {
        let mut bad = bundle(1, 2, &[0.0, 0.0], &[0]);
        bad[0] = b'X';
        assert!(matches!(read_eval_table(&bad), Err(Error::Format(_))));

        let b = bundle(1, 3, &[0.0, 0.0, 0.0], &[5]);
        assert!(matches!(read_eval_table(&b), Err(Error::Validation(_))));

        let b = bundle(1, 2, &[f32::NAN, 0.0], &[0]);
        assert!(matches!(read_eval_table(&b), Err(Error::Validation(_))));

        let mut b = bundle(1, 2, &[0.0, 0.0], &[0]);
        b.push(0);
        assert!(matches!(read_eval_table(&b), Err(Error::Format(_))));
        assert!(matches!(read_eval_table(&b[..20]), Err(Error::Format(_))));
    }

    #[test]
    fn narrowing_overflow_is_rejected() {
        let t = EvalTable::new(2, vec![1e300, 0.0], vec![0]).unwrap();
        assert!(matches!(write_eval_table(&t), Err(Error::Validation(_))));
    }

    #[test]
    fn narrowing_rounds_to_nearest_even() {
        // 1 + 2^-24 sits exactly between two f32 values; ties go to the even mantissa (1.0).
        let t = EvalTable::new(2, vec![1.0 + 2f64.powi(-24), 1.0 + 3.0 * 2f64.powi(-24)], vec![0]).unwrap();
        let back = read_eval_table(&write_eval_table(&t).unwrap()).unwrap();
        assert_eq!(back.logits(), &[1.0, 1.0 + 4.0 * 2f64.powi(-24)]);
    }

    #[test]
    fn checkpoint_single_tensor() {
        let manifest = br#"{"tensors":[{"name":"w","shape":[2],"offset_elems":0}],"total_elems":2}"#;
        let blob: Vec<u8> = [1.0f32, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let c = read_checkpoint(manifest, &blob).unwrap();
        assert_eq!(c.get("w").unwrap().data, vec![1.0, 3.0]);
        let (m2, b2) = write_checkpoint(&c).unwrap();
        assert_eq!(b2, blob);
        assert_eq!(m2, manifest.to_vec());
    }

    #[test]
    fn checkpoint_offsets() {
        let c = CheckpointTensors::new(vec![
            Tensor::new("a", vec![2], vec![1.0, 2.0]),
            Tensor::new("b", vec![3], vec![3.0, 4.0, 5.0]),
        ])
        .unwrap();
        let (m, b) = write_checkpoint(&c).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&m).unwrap();
        assert_eq!(v["tensors"][1]["offset_elems"], 2);
        assert_eq!(v["total_elems"], 5);
        assert_eq!(b.len(), 20);

        let (m, b) = write_checkpoint(&CheckpointTensors::default()).unwrap();
        assert!(b.is_empty());
        assert_eq!(serde_json::from_slice::<serde_json::Value>(&m).unwrap()["total_elems"], 0);
    }

    #[test]
    fn checkpoint_errors() {
        let manifest = br#"{"tensors":[{"name":"w","shape":[2],"offset_elems":0}],"total_elems":4}"#;
        assert!(matches!(read_checkpoint(manifest, &[0u8; 12]), Err(Error::Format(_))));

        let overlap = br#"{"tensors":[{"name":"a","shape":[2],"offset_elems":0},{"name":"b","shape":[2],"offset_elems":1}],"total_elems":3}"#;
        assert!(matches!(read_checkpoint(overlap, &[0u8; 12]), Err(Error::Format(_))));

        let out_of_range = br#"{"tensors":[{"name":"a","shape":[2],"offset_elems":2}],"total_elems":3}"#;
        assert!(matches!(read_checkpoint(out_of_range, &[0u8; 12]), Err(Error::Format(_))));

        assert!(matches!(read_checkpoint(b"{not json", &[]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn eval_bundle_byte_roundtrip(
            (c, rows) in (2usize..6).prop_flat_map(|c| (Just(c), prop::collection::vec(
                (prop::collection::vec(-1e6f32..1e6f32, c), 0..c as u32), 1..20)))
        ) {
            let n = rows.len();
            let logits: Vec<f32> = rows.iter().flat_map(|(r, _)| r.clone()).collect();
            let labels: Vec<u32> = rows.iter().map(|(_, y)| *y).collect();
            let b = bundle(n as u32, c as u32, &logits, &labels);
            let t = read_eval_table(&b).unwrap();
            prop_assert_eq!(write_eval_table(&t).unwrap(), b);
            prop_assert_eq!(read_eval_table(&write_eval_table(&t).unwrap()).unwrap(), t);
        }

        #[test]
        fn checkpoint_roundtrip(shapes in prop::collection::vec(prop::collection::vec(1u32..4, 0..3), 0..5), seed in any::<u32>()) {
            let tensors: Vec<Tensor> = shapes.iter().enumerate().map(|(i, s)| {
                let n: usize = s.iter().map(|&d| d as usize).product();
                let data = (0..n).map(|k| ((seed as f64 + k as f64 * 0.37).sin() * 100.0) as f32 as f64).collect();
                Tensor::new(format!("t{i}"), s.clone(), data)
            }).collect();
            let c = CheckpointTensors::new(tensors).unwrap();
            let (m, b) = write_checkpoint(&c).unwrap();
            let back = read_checkpoint(&m, &b).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(write_checkpoint(&back).unwrap(), (m, b));
        }
    }
}

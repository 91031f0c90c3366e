//! Write a run store to disk in the bundle/manifest layout and read it back.
//!
//! Run with: cargo run --example store_roundtrip

use std::collections::BTreeMap;

use posthoc::store::{format_index, load_store, save_store, CheckpointIndex, CheckpointTensors, EvalTable, RunStore, Tensor};

fn main() {
    let dir = std::env::temp_dir().join(format!("posthoc-store-{}", std::process::id()));
    let mut store = RunStore::new();
    for run in 1..=2u32 {
        for (k, index) in [0.5, 1.0, 1.5].into_iter().enumerate() {
            let w = (0..6).map(|i| run as f64 * 0.5 + (k * i) as f64 * 0.125).collect();
            let ck = CheckpointTensors::new(vec![
                Tensor::new("weight", vec![2, 3], w),
                Tensor::new("bias", vec![2], vec![0.0, 0.25]),
            ])
            .unwrap();
            let val = EvalTable::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]], vec![0, 1]).unwrap();
            let tables = BTreeMap::from([("val".to_string(), val)]);
            store.insert(CheckpointIndex { run, index }, Some(ck), tables).unwrap();
        }
    }
    save_store(&store, &dir).unwrap();
    for entry in std::fs::read_dir(dir.join("run-1")).unwrap() {
        println!("{}", entry.unwrap().path().display());
    }
    let back = load_store(&dir).unwrap();
    println!("runs {:?}, indices {:?}", back.run_ids(), back.run(1).unwrap().indices());
    println!("index 1.5 is stored as \"{}\"", format_index(1.5));
    let same = back.run(2).unwrap().entries()[2].checkpoint == store.run(2).unwrap().entries()[2].checkpoint;
    println!("checkpoint survives the 32-bit round trip exactly: {same}");
    std::fs::remove_dir_all(&dir).unwrap();
}

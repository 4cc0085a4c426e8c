#![allow(dead_code)]

use hetdetect_core::simlab::{gen_block, replicate_rng, ParetoSpec, Phase};
use hetdetect_core::{BlockData, LossModel};
use nalgebra::DVector;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const FEATURES: [&str; 3] = ["x1", "x2", "x3"];

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hetdetect"))
}

pub fn run(args: &[&str]) -> Output {
    bin().env_remove("HETDETECT_THREADS").args(args).output().expect("binary runs")
}

pub fn write_block_csv(path: &Path, data: &BlockData) {
    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header = vec!["y".to_string()];
    header.extend(FEATURES.iter().take(data.p()).map(|s| s.to_string()));
    w.write_record(&header).unwrap();
    for i in 0..data.n() {
        let mut rec = vec![data.response()[i].to_string()];
        rec.extend((0..data.p()).map(|j| data.design()[(i, j)].to_string()));
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
}

pub fn write_manifest(dir: &Path, ids: &[&str], files: &[&str]) -> PathBuf {
    let blocks: Vec<_> = ids
        .iter()
        .zip(files)
        .map(|(id, f)| serde_json::json!({"id": id, "path": f}))
        .collect();
    let doc = serde_json::json!({"response": "y", "features": FEATURES, "blocks": blocks});
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

/// Writes `thetas.len()` simulated blocks and a manifest naming them
/// `b0, b1, ...`.
pub fn simulated_blocks(dir: &Path, model: LossModel, n: usize, thetas: &[Vec<f64>], seed: u64) -> PathBuf {
    let pareto = ParetoSpec::default();
    let mut ids = Vec::new();
    let mut files = Vec::new();
    for (k, theta) in thetas.iter().enumerate() {
        let mut rng = replicate_rng(seed, Phase::Null, k as u64);
        let theta = DVector::from_vec(theta.clone());
        let data = gen_block(k, &theta, model, n, &pareto, &mut rng).unwrap();
        let file = format!("block{k}.csv");
        write_block_csv(&dir.join(&file), &data);
        ids.push(format!("b{k}"));
        files.push(file);
    }
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    let files: Vec<&str> = files.iter().map(String::as_str).collect();
    write_manifest(dir, &ids, &files)
}

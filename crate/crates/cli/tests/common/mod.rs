#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thumbqc_core::imaging::save_png;
use thumbqc_core::model::{Approach, FixationModel, ModelConfig};
use thumbqc_core::synthetic::{thumbnail, SyntheticOptions};
use thumbqc_core::training::Label;

pub fn thumbqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thumbqc"))
        .args(args)
        .env_remove("THUMBQC_SEED")
        .output()
        .expect("spawn thumbqc")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A freshly initialized desk model saved as a bundle.
pub fn bundle(dir: &Path, approach: Approach, seed: u64) -> PathBuf {
    let path = dir.join(format!("bundle-{approach}"));
    FixationModel::new(ModelConfig::desk(approach), seed)
        .unwrap()
        .save(&path, Some(seed), Default::default())
        .unwrap();
    path
}

/// `n` small synthetic PNGs named `slide-<k>.png`, alternating classes.
pub fn pngs(dir: &Path, n: usize) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    let opts = SyntheticOptions {
        min_side: 48,
        max_side: 96,
        ..Default::default()
    };
    (0..n)
        .map(|k| {
            let label = if k % 2 == 0 { Label::Ffpe } else { Label::Fs };
            let p = dir.join(format!("slide-{k}.png"));
            save_png(&thumbnail(label, k as u64, &opts), &p).unwrap();
            p
        })
        .collect()
}

pub fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

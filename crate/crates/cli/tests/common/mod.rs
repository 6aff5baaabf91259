#![allow(dead_code)]

use std::fs;
use std::path::Path;

use serde_json::Value;

/// Runs the CLI in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    probegeom_cli::run(std::iter::once("probegeom").chain(args.iter().copied()))
}

pub fn ok(args: &[&str]) {
    assert_eq!(cli(args), 0, "probegeom {}", args.join(" "));
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 40 groups x 4 records (two paraphrases per answer), 8 dims, 3 layers.
pub fn small_dump(dir: &Path) {
    ok(&[
        "gen-synth", "--preset", "mean-shift", "--dim", "8", "--groups", "40", "--records-per-group", "4",
        "--jitter", "0.1", "--num-layers", "3", "--seed", "3", "--out", s(dir),
    ]);
}

pub fn csv_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

pub fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

pub fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    k.sort_unstable();
    k
}

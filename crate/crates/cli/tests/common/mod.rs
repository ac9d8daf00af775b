#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_xdrec");

pub fn xdrec(args: &[&str]) -> Output {
    xdrec_env(args, &[])
}

pub fn xdrec_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("XDREC_OUT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn xdrec")
}

/// Runs and asserts success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = xdrec(args);
    assert!(
        out.status.success(),
        "xdrec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `key=value` lines.
pub fn parse_block(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Synthesizes and prepares a corpus under `root`; returns the prepared dir.
pub fn prepared(root: &Path, users: usize, seed: u64) -> PathBuf {
    let raw = root.join("raw");
    let data = root.join("data");
    ok(&[
        "synth",
        "--out",
        s(&raw),
        "--users",
        &users.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    ok(&[
        "prepare",
        "--events",
        s(&raw.join("events.tsv")),
        "--out",
        s(&data),
        "--min-interactions",
        "1",
    ]);
    data
}

/// Small, fast training flags.
pub const TINY: &[&str] = &[
    "--dim",
    "8",
    "--max-len",
    "10",
    "--batch-size",
    "16",
    "--max-epochs",
    "2",
    "--quiet",
];

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

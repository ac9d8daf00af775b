//! Oracles and an in-process command runner for the acceptance suite.

use std::path::Path;

use clap::Parser;
use ndarray::{Array1, Array2};
use rand::Rng;
use xdrec_cli::args::Cli;
use xdrec_core::Mat;

/// Runs one `xdrec` invocation in-process and returns what it printed.
pub fn xdrec(args: &[&str]) -> Result<String, String> {
    let cli = Cli::try_parse_from(std::iter::once("xdrec").chain(args.iter().copied()))
        .map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    xdrec_cli::run(&cli, &mut out).map_err(|e| format!("{e:#}"))?;
    String::from_utf8(out).map_err(|e| e.to_string())
}

/// Like [`xdrec`], panicking on failure.
pub fn ok(args: &[&str]) -> String {
    xdrec(args).unwrap_or_else(|e| panic!("xdrec {args:?}: {e}"))
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).expect("json")
}

/// Synthesizes `users` users and prepares them under `root` with
/// `min_interactions = 1`; returns the prepared directory.
pub fn prepared(root: &Path, users: usize, seed: u64) -> std::path::PathBuf {
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

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(rand_distr::StandardNormal))
}

pub fn frobenius(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-sided Jacobi SVD: the `min(n, d)` largest singular values,
/// descending, and the matching right singular vectors.
pub fn svd_oracle(m: &Mat) -> (Vec<f64>, Vec<Array1<f64>>) {
    let (n, d) = m.dim();
    let mut a = m.clone();
    let mut v = Mat::eye(d);
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let alpha = a.column(p).dot(&a.column(p));
                let beta = a.column(q).dot(&a.column(q));
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for x in [&mut a, &mut v] {
                    for i in 0..x.nrows() {
                        let (xp, xq) = (x[[i, p]], x[[i, q]]);
                        x[[i, p]] = c * xp - s * xq;
                        x[[i, q]] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..d)
        .map(|j| a.column(j).dot(&a.column(j)).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    order.truncate(n.min(d));
    let values = order.iter().map(|&j| norms[j]).collect();
    let vectors = order.iter().map(|&j| v.column(j).to_owned()).collect();
    (values, vectors)
}

#![allow(dead_code)]

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use xdrec_core::corpus::{
    build_corpus, generate_synthetic, make_splits, DatasetSplit, SyntheticSpec,
};
use xdrec_core::{Domain, Graphs, Mat, RawGraphs};

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal))
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

pub fn frobenius(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub struct SmallCorpus {
    pub split: DatasetSplit,
    pub graphs: Graphs,
    pub n_x: usize,
    pub n_y: usize,
}

/// A planted corpus at the given scale, filtered with `min_interactions = 1`.
pub fn small_corpus(n_users: usize, n_items: usize, seed: u64) -> SmallCorpus {
    let spec = SyntheticSpec {
        n_users,
        n_items_per_domain: n_items,
        n_clusters: 2,
        seq_len_range: (8, 12),
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = build_corpus(&generate_synthetic(&spec).unwrap(), 1, 1).unwrap();
    let split = make_splits(&corpus.sequences, seed);
    let n_x = corpus.vocab.size(Domain::X);
    let n_y = corpus.vocab.size(Domain::Y);
    let graphs = RawGraphs::build(&split.train, n_x, n_y, 1)
        .unwrap()
        .normalized();
    SmallCorpus {
        split,
        graphs,
        n_x,
        n_y,
    }
}

//! Named parameter tensors and their initialization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::Domain;
use crate::seqmodel::EncoderKind;
use crate::tape::{Mat, Tape, Var};
use crate::trainer::HyperParams;

/// Every learnable tensor of a model, in a fixed insertion order.
///
/// The item table `emb` is stored once with X rows first; the per-domain
/// tables are row ranges of it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = value;
            return;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    /// Zeros with the same names and shapes.
    pub fn zeros_like(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (n, t) in self.iter() {
            out.insert(n, Mat::zeros(t.dim()));
        }
        out
    }

    /// Puts every tensor on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound<'_> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        Bound { set: self, vars }
    }

    /// Rows of the shared item table belonging to `domain`.
    pub fn domain_rows(&self, domain: Domain, n_x: usize) -> std::ops::Range<usize> {
        let n = self.get("emb").map_or(0, Mat::nrows);
        match domain {
            Domain::X => 0..n_x,
            Domain::Y => n_x..n,
        }
    }
}

/// A [`ParameterSet`] placed on a tape.
pub struct Bound<'a> {
    set: &'a ParameterSet,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        match self.set.position(name) {
            Some(i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.set.position(name).map(|i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// `N(0, 1)` truncated to `[-2, 2]` and rescaled so the result has standard
/// deviation `std`.
pub fn truncated_normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
    // standard deviation of N(0,1) conditioned on |x| <= 2
    const TRUNC_STD: f64 = 0.879_625_661_783_657;
    Mat::from_shape_simple_fn((rows, cols), || loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= 2.0 {
            break x * std / TRUNC_STD;
        }
    })
}

pub fn fan_in_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    let bound = 1.0 / (rows as f64).sqrt();
    Mat::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn linear(set: &mut ParameterSet, rng: &mut impl Rng, name: &str, inp: usize, out: usize) {
    set.insert(format!("{name}.w"), fan_in_uniform(rng, inp, out));
    set.insert(format!("{name}.b"), Mat::zeros((1, out)));
}

pub(crate) fn gru(
    set: &mut ParameterSet,
    rng: &mut impl Rng,
    prefix: &str,
    inp: usize,
    hidden: usize,
) {
    for gate in ["r", "z", "n"] {
        set.insert(
            format!("{prefix}.w_i{gate}"),
            fan_in_uniform(rng, inp, hidden),
        );
        set.insert(
            format!("{prefix}.w_h{gate}"),
            fan_in_uniform(rng, hidden, hidden),
        );
        set.insert(format!("{prefix}.b_i{gate}"), Mat::zeros((1, hidden)));
        set.insert(format!("{prefix}.b_h{gate}"), Mat::zeros((1, hidden)));
    }
}

fn layer_norm(set: &mut ParameterSet, name: &str, d: usize) {
    set.insert(format!("{name}.g"), Mat::ones((1, d)));
    set.insert(format!("{name}.b"), Mat::zeros((1, d)));
}

/// Fresh parameters for a vocabulary of `n_x + n_y` items.
///
/// Item and positional tables are truncated normal with std 0.02, weight
/// matrices uniform in `±1/sqrt(fan_in)`, filter means `0.01·N(0, 1)`,
/// biases zero and layer-norm gains one.
pub fn init_params(hp: &HyperParams, n_x: usize, n_y: usize, seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = hp.dim;
    let mut set = ParameterSet::new();
    set.insert("emb", truncated_normal(&mut rng, n_x + n_y, d, 0.02));

    for dom in ["x", "y"] {
        let p = format!("noise.{dom}");
        gru(&mut set, &mut rng, &format!("{p}.gru"), d, d);
        for net in ["mu", "sigma"] {
            linear(&mut set, &mut rng, &format!("{p}.{net}.l1"), d, d);
            linear(&mut set, &mut rng, &format!("{p}.{net}.l2"), d, d);
        }
    }
    for dom in ["x", "y"] {
        let mu: Mat = Mat::from_shape_simple_fn((1, d), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.01 * z
        });
        set.insert(format!("filter.mu_{dom}"), mu);
    }

    let enc = &hp.encoder;
    match enc.kind {
        EncoderKind::GnnAtt | EncoderKind::AttentionOnly => {
            set.insert("enc.pos", truncated_normal(&mut rng, hp.max_len, d, 0.02));
            let ff = enc.ff_dim.unwrap_or(d);
            for b in 0..enc.blocks {
                let p = format!("enc.b{b}");
                layer_norm(&mut set, &format!("{p}.ln1"), d);
                for proj in ["wq", "wk", "wv", "wo"] {
                    linear(&mut set, &mut rng, &format!("{p}.{proj}"), d, d);
                }
                layer_norm(&mut set, &format!("{p}.ln2"), d);
                linear(&mut set, &mut rng, &format!("{p}.ff1"), d, ff);
                linear(&mut set, &mut rng, &format!("{p}.ff2"), ff, d);
            }
            layer_norm(&mut set, "enc.ln_f", d);
        }
        EncoderKind::Recurrent => gru(&mut set, &mut rng, "enc.gru", d, d),
    }

    set.insert("head.x", fan_in_uniform(&mut rng, d, n_x));
    set.insert("head.y", fan_in_uniform(&mut rng, d, n_y));
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HyperParams {
        HyperParams {
            dim: 8,
            max_len: 5,
            ..HyperParams::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let hp = small();
        assert_eq!(init_params(&hp, 4, 3, 9), init_params(&hp, 4, 3, 9));
        assert_ne!(init_params(&hp, 4, 3, 9), init_params(&hp, 4, 3, 10));
    }

    #[test]
    fn embedding_rows_cover_both_domains() {
        let p = init_params(&small(), 4, 3, 0);
        assert_eq!(p.get("emb").unwrap().dim(), (7, 8));
        assert_eq!(p.get("head.y").unwrap().dim(), (8, 3));
        assert_eq!(p.domain_rows(Domain::Y, 4), 4..7);
    }

    #[test]
    fn embedding_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = truncated_normal(&mut rng, 1000, 100, 0.02);
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let std = (m.mapv(|x| (x - mean).powi(2)).sum() / n).sqrt();
        assert!((std - 0.02).abs() < 0.001, "std {std}");
        assert!(m
            .iter()
            .all(|x| x.abs() <= 2.0 * 0.02 / 0.879_625_661_783_657 + 1e-12));
    }

    #[test]
    fn recurrent_kind_has_no_positions() {
        let mut hp = small();
        hp.encoder.kind = EncoderKind::Recurrent;
        let p = init_params(&hp, 2, 2, 0);
        assert!(p.get("enc.pos").is_none());
        assert!(p.get("enc.gru.w_hz").is_some());
    }
}

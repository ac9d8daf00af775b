//! Item co-occurrence graphs and LightGCN-style propagation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{CrossDomainSequence, Domain};
use crate::error::{Error, Result};
use crate::tape::{Mat, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    Symmetric,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::Symmetric => "symmetric",
        })
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(Normalization::None),
            "symmetric" => Ok(Normalization::Symmetric),
            other => Err(format!("unknown normalization {other:?}")),
        }
    }
}

/// Weighted sparse adjacency in coordinate form, entries sorted by
/// `(row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdjacency {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub normalization: Normalization,
}

impl SparseAdjacency {
    fn from_counts(n: usize, counts: BTreeMap<(usize, usize), f64>) -> Self {
        Self {
            n,
            entries: counts.into_iter().map(|((r, c), w)| (r, c, w)).collect(),
            normalization: Normalization::None,
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.entries
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(row, col)))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(r, _, w) in &self.entries {
            d[r] += w;
        }
        d
    }

    /// `D^{-1/2} A D^{-1/2}` with `D` the weighted degree.
    pub fn normalized(&self) -> SparseAdjacency {
        let d = self.degrees();
        let entries = self
            .entries
            .iter()
            .map(|&(r, c, w)| (r, c, w / (d[r] * d[c]).sqrt()))
            .collect();
        SparseAdjacency {
            n: self.n,
            entries,
            normalization: Normalization::Symmetric,
        }
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros((self.n, self.n));
        for &(r, c, w) in &self.entries {
            m[[r, c]] += w;
        }
        m
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            writeln!(out, "n={} norm={}", self.n, self.normalization)?;
            for &(r, c, w) in &self.entries {
                writeln!(out, "{r}\t{c}\t{w:?}")?;
            }
            out.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<SparseAdjacency> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let perr = |line: usize, message: &str| Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        };
        let header = lines
            .next()
            .ok_or_else(|| perr(1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let mut n = None;
        let mut normalization = None;
        for tok in header.split_whitespace() {
            match tok.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("norm", v)) => normalization = v.parse::<Normalization>().ok(),
                _ => return Err(perr(1, "bad header")),
            }
        }
        let (Some(n), Some(normalization)) = (n, normalization) else {
            return Err(perr(1, "header needs n=<count> norm=<scheme>"));
        };
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(perr(line_no, "expected row<TAB>col<TAB>weight"));
            }
            let r: usize = f[0].parse().map_err(|_| perr(line_no, "bad row"))?;
            let c: usize = f[1].parse().map_err(|_| perr(line_no, "bad col"))?;
            let w: f64 = f[2].parse().map_err(|_| perr(line_no, "bad weight"))?;
            if r >= n || c >= n || w.is_nan() || w <= 0.0 {
                return Err(perr(line_no, "entry out of range"));
            }
            entries.push((r, c, w));
        }
        entries.sort_by_key(|a| (a.0, a.1));
        Ok(SparseAdjacency {
            n,
            entries,
            normalization,
        })
    }
}

fn accumulate<I>(n: usize, paths: I, window: usize) -> SparseAdjacency
where
    I: IntoIterator<Item = Vec<usize>>,
{
    let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for path in paths {
        for i in 0..path.len() {
            for j in i + 1..path.len().min(i + window + 1) {
                let (a, b) = (path[i], path[j]);
                if a != b {
                    *counts.entry((a, b)).or_default() += 1.0;
                    *counts.entry((b, a)).or_default() += 1.0;
                }
            }
        }
    }
    SparseAdjacency::from_counts(n, counts)
}

/// Undirected co-occurrence graph over one domain's items: every pair at
/// distance `<= window` in a user's domain-restricted subsequence adds 1 to
/// both `(i, j)` and `(j, i)`. Self-loops are skipped.
pub fn build_domain_graph(
    sequences: &[CrossDomainSequence],
    domain: Domain,
    n_items: usize,
    window: usize,
) -> Result<SparseAdjacency> {
    if n_items == 0 {
        return Err(Error::InvalidArgument(format!(
            "domain {domain} has no items"
        )));
    }
    let paths = sequences.iter().map(|s| {
        s.items
            .iter()
            .filter(|i| i.domain == domain)
            .map(|i| i.local)
            .collect()
    });
    Ok(accumulate(n_items, paths, window))
}

/// Same rule as [`build_domain_graph`] over full mixed sequences in the
/// global index space.
pub fn build_mixed_graph(
    sequences: &[CrossDomainSequence],
    n_total: usize,
    window: usize,
) -> Result<SparseAdjacency> {
    if n_total == 0 {
        return Err(Error::InvalidArgument("empty vocabulary".into()));
    }
    let paths = sequences
        .iter()
        .map(|s| s.items.iter().map(|i| i.global).collect());
    Ok(accumulate(n_total, paths, window))
}

/// Row-compressed symmetric-normalized adjacency used for propagation.
/// Rows of isolated nodes carry a unit self-loop so their embedding passes
/// through every layer unchanged.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(adj: &SparseAdjacency) -> Result<Self> {
        if adj.normalization != Normalization::Symmetric {
            return Err(Error::InvalidArgument(
                "propagation needs a symmetric-normalized adjacency".into(),
            ));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); adj.n];
        for &(r, c, w) in &adj.entries {
            rows[r].push((c, w));
        }
        let mut indptr = Vec::with_capacity(adj.n + 1);
        let mut indices = Vec::with_capacity(adj.entries.len());
        let mut values = Vec::with_capacity(adj.entries.len());
        indptr.push(0);
        for (r, row) in rows.iter().enumerate() {
            if row.is_empty() {
                indices.push(r);
                values.push(1.0);
            } else {
                for &(c, w) in row {
                    indices.push(c);
                    values.push(w);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n: adj.n,
            indptr,
            indices,
            values,
        })
    }

    /// Normalizes `raw` and compresses it.
    pub fn from_raw(raw: &SparseAdjacency) -> Self {
        Self::new(&raw.normalized()).expect("normalized")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn spmm(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros((self.n, x.ncols()));
        for r in 0..self.n {
            let mut row = out.row_mut(r);
            for k in self.indptr[r]..self.indptr[r + 1] {
                row.scaled_add(self.values[k], &x.row(self.indices[k]));
            }
        }
        out
    }

    pub fn spmm_transpose(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros((self.n, x.ncols()));
        for r in 0..self.n {
            let src = x.row(r);
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.row_mut(self.indices[k])
                    .scaled_add(self.values[k], &src);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub layers: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { layers: 2 }
    }
}

/// Layer mean `(E_0 + ... + E_L) / (L + 1)` with `E_l = Â E_{l-1}`.
pub fn propagate(adj: &NormalizedAdjacency, e: &Mat, cfg: PropagationConfig) -> Result<Mat> {
    if adj.n() != e.nrows() {
        return Err(Error::Shape(format!(
            "adjacency has {} nodes, embedding table {} rows",
            adj.n(),
            e.nrows()
        )));
    }
    let mut layer = e.clone();
    let mut sum = e.clone();
    for _ in 0..cfg.layers {
        layer = adj.spmm(&layer);
        sum += &layer;
    }
    sum /= (cfg.layers + 1) as f64;
    Ok(sum)
}

pub fn propagate_on_tape(
    tape: &mut Tape,
    adj: &Arc<NormalizedAdjacency>,
    e: Var,
    cfg: PropagationConfig,
) -> Var {
    assert_eq!(adj.n(), tape.shape(e).0, "propagate: node count");
    let mut layer = e;
    let mut sum = e;
    for _ in 0..cfg.layers {
        layer = tape.spmm(adj, layer);
        sum = tape.add(sum, layer);
    }
    tape.scale(sum, 1.0 / (cfg.layers + 1) as f64)
}

/// The three graphs a model propagates over.
#[derive(Clone, Debug)]
pub struct Graphs {
    pub x: Arc<NormalizedAdjacency>,
    pub y: Arc<NormalizedAdjacency>,
    pub mixed: Arc<NormalizedAdjacency>,
}

#[derive(Clone, Debug)]
pub struct RawGraphs {
    pub x: SparseAdjacency,
    pub y: SparseAdjacency,
    pub mixed: SparseAdjacency,
}

pub const GRAPH_FILES: [&str; 3] = ["graph_x.tsv", "graph_y.tsv", "graph_mixed.tsv"];

impl RawGraphs {
    pub fn build(
        sequences: &[CrossDomainSequence],
        n_x: usize,
        n_y: usize,
        window: usize,
    ) -> Result<Self> {
        Ok(Self {
            x: build_domain_graph(sequences, Domain::X, n_x, window)?,
            y: build_domain_graph(sequences, Domain::Y, n_y, window)?,
            mixed: build_mixed_graph(sequences, n_x + n_y, window)?,
        })
    }

    pub fn normalized(&self) -> Graphs {
        Graphs {
            x: Arc::new(NormalizedAdjacency::from_raw(&self.x)),
            y: Arc::new(NormalizedAdjacency::from_raw(&self.y)),
            mixed: Arc::new(NormalizedAdjacency::from_raw(&self.mixed)),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (g, name) in [&self.x, &self.y, &self.mixed].into_iter().zip(GRAPH_FILES) {
            g.write(&dir.join(name))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let [x, y, mixed] = GRAPH_FILES.map(|name| SparseAdjacency::read(&dir.join(name)));
        let (x, y, mixed) = (x?, y?, mixed?);
        for g in [&x, &y, &mixed] {
            if g.normalization != Normalization::None {
                return Err(Error::InvalidArgument(
                    "stored graphs must be raw counts".into(),
                ));
            }
        }
        Ok(Self { x, y, mixed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DomainVocab;
    use ndarray::array;

    fn seq(vocab: &DomainVocab, items: &[(Domain, usize)]) -> CrossDomainSequence {
        CrossDomainSequence {
            user: "u".into(),
            items: items.iter().map(|&(d, l)| vocab.item_ref(d, l)).collect(),
        }
    }

    fn vocab(nx: usize, ny: usize) -> DomainVocab {
        DomainVocab::new(
            (0..nx).map(|i| format!("x{i}")).collect(),
            (0..ny).map(|i| format!("y{i}")).collect(),
        )
    }

    #[test]
    fn path_graph_from_one_user() {
        let v = vocab(3, 1);
        let s = seq(
            &v,
            &[
                (Domain::X, 0),
                (Domain::Y, 0),
                (Domain::X, 1),
                (Domain::X, 2),
            ],
        );
        let g = build_domain_graph(&[s], Domain::X, 3, 1).unwrap();
        assert_eq!(
            g.entries,
            vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]
        );
    }

    #[test]
    fn shared_edges_accumulate() {
        let v = vocab(2, 1);
        let a = seq(&v, &[(Domain::X, 0), (Domain::X, 1)]);
        let b = seq(&v, &[(Domain::X, 1), (Domain::X, 0)]);
        let g = build_domain_graph(&[a, b], Domain::X, 2, 1).unwrap();
        assert_eq!(g.weight(0, 1), 2.0);
        assert_eq!(g.weight(1, 0), 2.0);
    }

    #[test]
    fn mixed_graph_uses_global_indices() {
        let v = vocab(2, 2);
        let s = seq(&v, &[(Domain::X, 0), (Domain::Y, 0), (Domain::X, 1)]);
        let g = build_mixed_graph(&[s], 4, 1).unwrap();
        assert_eq!(g.weight(0, 2), 1.0);
        assert_eq!(g.weight(2, 1), 1.0);
        assert_eq!(g.weight(0, 1), 0.0);
    }

    #[test]
    fn empty_domain_is_an_error() {
        assert!(build_domain_graph(&[], Domain::Y, 0, 1).is_err());
    }

    #[test]
    fn path_graph_hand_oracle() {
        let raw = SparseAdjacency {
            n: 3,
            entries: vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
            normalization: Normalization::None,
        };
        let adj = NormalizedAdjacency::from_raw(&raw);
        let e = Mat::eye(3);
        let out = propagate(&adj, &e, PropagationConfig { layers: 1 }).unwrap();
        let h = 1.0 / 2f64.sqrt();
        let expected = array![
            [0.5, 0.5 * h, 0.0],
            [0.5 * h, 0.5, 0.5 * h],
            [0.0, 0.5 * h, 0.5]
        ];
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_layers_is_identity() {
        let raw = SparseAdjacency {
            n: 2,
            entries: vec![(0, 1, 3.0), (1, 0, 3.0)],
            normalization: Normalization::None,
        };
        let adj = NormalizedAdjacency::from_raw(&raw);
        let e = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(
            propagate(&adj, &e, PropagationConfig { layers: 0 }).unwrap(),
            e
        );
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let raw = SparseAdjacency {
            n: 1,
            entries: vec![],
            normalization: Normalization::None,
        };
        assert!(NormalizedAdjacency::new(&raw).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let raw = SparseAdjacency {
            n: 3,
            entries: vec![],
            normalization: Normalization::None,
        };
        let adj = NormalizedAdjacency::from_raw(&raw);
        assert!(propagate(&adj, &Mat::zeros((2, 2)), PropagationConfig::default()).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = SparseAdjacency {
            n: 4,
            entries: vec![(0, 3, 2.0), (3, 0, 2.0)],
            normalization: Normalization::None,
        };
        let path = dir.path().join("g.tsv");
        raw.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("n=4 norm=none\n"));
        assert_eq!(SparseAdjacency::read(&path).unwrap(), raw);
        let norm = raw.normalized();
        norm.write(&path).unwrap();
        assert_eq!(SparseAdjacency::read(&path).unwrap(), norm);
    }
}

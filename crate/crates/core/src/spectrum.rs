//! Adaptive spectrum filtering and the manual spectrum probe.
//!
//! The filter removes one direction from the column space of the global
//! item table: with `v̂ = ÊᵀÊv`, the output is `Ê − Ê v̂ v̂ᵀ / ‖v̂‖²`. When
//! `v` is a right singular vector this deletes exactly that singular value
//! and leaves the rest of the spectrum untouched, without computing an SVD.

use ndarray::Array1;
use ndarray_linalg::{JobSvd, SVD, SVDDC};
use serde::{Deserialize, Serialize};

use crate::augment::infonce_on_tape;
use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::tape::{Mat, Tape, Var};

/// `‖v̂‖ < DEGENERATE_RATIO · ‖Ê‖_F` leaves the input unfiltered.
pub const DEGENERATE_RATIO: f64 = 1e-10;

pub fn filter_mean_name(domain: Domain) -> String {
    format!("filter.mu_{}", domain.lower())
}

/// Reparameterized draw from `N(μ, I)`.
pub fn sample_filter(mu: &Array1<f64>, eps: &Array1<f64>) -> Array1<f64> {
    mu + eps
}

#[derive(Clone, Debug, PartialEq)]
pub struct Filtered {
    pub matrix: Mat,
    pub degenerate: bool,
}

pub fn apply_rank1_filter(e_hat: &Mat, v: &Array1<f64>) -> Result<Filtered> {
    if e_hat.ncols() != v.len() {
        return Err(Error::Shape(format!(
            "table has {} columns, filter {} entries",
            e_hat.ncols(),
            v.len()
        )));
    }
    let v_hat = e_hat.t().dot(&e_hat.dot(v));
    let norm_sq = v_hat.dot(&v_hat);
    let frob = e_hat.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_sq.sqrt() < DEGENERATE_RATIO * frob || norm_sq == 0.0 {
        return Ok(Filtered {
            matrix: e_hat.clone(),
            degenerate: true,
        });
    }
    let proj = e_hat.dot(&v_hat);
    let mut out = e_hat.clone();
    for (mut row, &p) in out.rows_mut().into_iter().zip(proj.iter()) {
        row.scaled_add(-p / norm_sq, &v_hat);
    }
    Ok(Filtered {
        matrix: out,
        degenerate: false,
    })
}

/// Tape version of [`apply_rank1_filter`] for a `1×d` filter node. The
/// degeneracy test is made on the forward values; a degenerate filter
/// returns `e_hat` itself.
pub fn filter_on_tape(tape: &mut Tape, e_hat: Var, v: Var) -> (Var, bool) {
    let ev = {
        let vt = tape.transpose(v);
        tape.matmul(e_hat, vt)
    };
    let et = tape.transpose(e_hat);
    let v_hat = tape.matmul(et, ev);
    let sq = tape.mul(v_hat, v_hat);
    let norm_sq = tape.sum(sq);
    let frob = tape.value(e_hat).iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = tape.scalar(norm_sq);
    if n.sqrt() < DEGENERATE_RATIO * frob || n == 0.0 {
        return (e_hat, true);
    }
    let proj = tape.matmul(e_hat, v_hat);
    let vt = tape.transpose(v_hat);
    let outer = tape.matmul(proj, vt);
    let scaled = tape.div_scalar(outer, norm_sq);
    (tape.sub(e_hat, scaled), false)
}

/// Sum of the per-domain InfoNCE terms between filtered global rows and
/// augmented local rows. An empty side contributes nothing.
pub fn inter_infonce_on_tape(tape: &mut Tape, pairs: &[(Var, Var)], tau: f64) -> Option<Var> {
    let mut terms = Vec::new();
    for &(a, p) in pairs {
        if tape.shape(a).0 > 0 {
            terms.push((1.0, infonce_on_tape(tape, a, p, tau)));
        }
    }
    (!terms.is_empty()).then(|| tape.weighted_sum(&terms))
}

pub fn inter_infonce(
    filtered_x: &Mat,
    augmented_x: &Mat,
    filtered_y: &Mat,
    augmented_y: &Mat,
    tau: f64,
) -> Result<f64> {
    if filtered_x.nrows() == 0 && filtered_y.nrows() == 0 {
        return Err(Error::InvalidArgument("both domains are empty".into()));
    }
    for (a, b) in [(filtered_x, augmented_x), (filtered_y, augmented_y)] {
        if a.dim() != b.dim() {
            return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
        }
    }
    let mut tape = Tape::new();
    let pairs: Vec<(Var, Var)> = [(filtered_x, augmented_x), (filtered_y, augmented_y)]
        .into_iter()
        .map(|(a, b)| (tape.constant(a.clone()), tape.constant(b.clone())))
        .collect();
    let loss = inter_infonce_on_tape(&mut tape, &pairs, tau).expect("non-empty");
    Ok(tape.scalar(loss))
}

/// Which singular values to rescale (1-based, inclusive) and by how much.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub first: usize,
    pub last: usize,
    pub coefficient: f64,
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.first == 0 || self.last < self.first {
            return Err(Error::InvalidArgument(format!(
                "bad singular value group {}-{}",
                self.first, self.last
            )));
        }
        if !(0.0..=1.0).contains(&self.coefficient) {
            return Err(Error::InvalidArgument(
                "coefficient must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.first..=self.last).contains(&k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutput {
    pub matrix: Mat,
    /// Singular values before and after, descending, one per thin-SVD index.
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Descending singular values.
pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let (_, s, _) = m.svd(false, false)?;
    Ok(s.to_vec())
}

/// Numerical rank with tolerance `max(n, d) · ε · σ₁`.
pub fn numerical_rank(singular: &[f64], rows: usize, cols: usize) -> usize {
    let top = singular.first().copied().unwrap_or(0.0);
    let tol = rows.max(cols) as f64 * f64::EPSILON * top;
    singular.iter().filter(|&&s| s > tol).count()
}

/// Thin SVD, scale `σ_k` by the coefficient for `k` in the group, and
/// reassemble.
pub fn probe_spectrum(e_hat: &Mat, spec: &ProbeSpec) -> Result<ProbeOutput> {
    spec.validate()?;
    if e_hat.is_empty() {
        return Err(Error::InvalidArgument("empty table".into()));
    }
    let (u, before, vt) = e_hat.svddc(JobSvd::Some)?;
    let (u, vt) = (u.expect("u"), vt.expect("vt"));
    let before = before.to_vec();
    let rank = numerical_rank(&before, e_hat.nrows(), e_hat.ncols());
    if spec.last > rank {
        return Err(Error::InvalidArgument(format!(
            "group {}-{} exceeds rank {rank}",
            spec.first, spec.last
        )));
    }
    let after: Vec<f64> = before
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if spec.contains(k + 1) {
                s * spec.coefficient
            } else {
                s
            }
        })
        .collect();
    let mut scaled = u;
    for (mut col, &s) in scaled.columns_mut().into_iter().zip(&after) {
        col *= s;
    }
    Ok(ProbeOutput {
        matrix: scaled.dot(&vt),
        before,
        after,
    })
}

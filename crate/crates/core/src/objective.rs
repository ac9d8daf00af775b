//! Next-item losses, the annealing factor and the combined objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::tape::{Mat, Tape, Var};

/// Lower bound of the annealing factor.
pub const ETA_FLOOR: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub n_anneal: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
            n_anneal: 50,
        }
    }
}

/// `max(0.5, 1 − 0.5·step/n_anneal)`.
pub fn anneal_eta(step: usize, n_anneal: usize) -> f64 {
    if n_anneal == 0 || step >= n_anneal {
        return ETA_FLOOR;
    }
    1.0 - 0.5 * step as f64 / n_anneal as f64
}

/// Successor of each flattened row: the next mixed-order item's domain and
/// local index, if any.
pub type Successors = [Option<(Domain, usize)>];

/// Rows whose successor lies in `domain`, with the successor's local index.
pub fn routed(successors: &Successors, domain: Domain) -> (Vec<usize>, Vec<usize>) {
    successors
        .iter()
        .enumerate()
        .filter_map(|(r, s)| s.filter(|(d, _)| *d == domain).map(|(_, i)| (r, i)))
        .unzip()
}

/// Mean cross-entropy of `(h_dom + h) W` over rows whose successor is in
/// `domain`. `None` when no row contributes.
pub fn single_domain_on_tape(
    tape: &mut Tape,
    h_dom: Var,
    h: Var,
    head: Var,
    successors: &Successors,
    domain: Domain,
) -> Option<Var> {
    let (rows, targets) = routed(successors, domain);
    if rows.is_empty() {
        return None;
    }
    let index = Arc::new(rows.iter().map(|&r| Some(r)).collect::<Vec<_>>());
    let a = tape.gather(h_dom, index.clone());
    let b = tape.gather(h, index);
    let s = tape.add(a, b);
    let logits = tape.matmul(s, head);
    let w = 1.0 / rows.len() as f64;
    Some(tape.cross_entropy(logits, targets, w))
}

/// Mean cross-entropy of `h W^dom` over all rows with a successor, where
/// `dom` is the successor's domain. `None` when no row contributes.
pub fn cross_domain_on_tape(
    tape: &mut Tape,
    h: Var,
    head_x: Var,
    head_y: Var,
    successors: &Successors,
) -> Option<Var> {
    let total = successors.iter().flatten().count();
    if total == 0 {
        return None;
    }
    let w = 1.0 / total as f64;
    let mut terms = Vec::new();
    for (domain, head) in [(Domain::X, head_x), (Domain::Y, head_y)] {
        let (rows, targets) = routed(successors, domain);
        if rows.is_empty() {
            continue;
        }
        let hs = tape.gather_rows(h, &rows);
        let logits = tape.matmul(hs, head);
        terms.push((1.0, tape.cross_entropy(logits, targets, w)));
    }
    Some(tape.weighted_sum(&terms))
}

/// A loss value with the number of positions it averages over. Zero
/// positions means the term is absent and its value is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub value: f64,
    pub positions: usize,
}

impl Contribution {
    pub fn is_empty(&self) -> bool {
        self.positions == 0
    }
}

fn check_rows(mats: &[&Mat], successors: &Successors) -> Result<()> {
    for m in mats {
        if m.nrows() != successors.len() {
            return Err(Error::Shape(format!(
                "{} state rows for {} successors",
                m.nrows(),
                successors.len()
            )));
        }
    }
    Ok(())
}

fn check_targets(head: &Mat, successors: &Successors, domain: Domain) -> Result<()> {
    let (_, targets) = routed(successors, domain);
    match targets.iter().find(|&&t| t >= head.ncols()) {
        Some(t) => Err(Error::Shape(format!(
            "target {t} outside a head of {}",
            head.ncols()
        ))),
        None => Ok(()),
    }
}

pub fn single_domain_loss(
    h_dom: &Mat,
    h: &Mat,
    head: &Mat,
    successors: &Successors,
    domain: Domain,
) -> Result<Contribution> {
    check_rows(&[h_dom, h], successors)?;
    check_targets(head, successors, domain)?;
    let mut tape = Tape::new();
    let (a, b, w) = (
        tape.constant(h_dom.clone()),
        tape.constant(h.clone()),
        tape.constant(head.clone()),
    );
    let positions = routed(successors, domain).0.len();
    let value = single_domain_on_tape(&mut tape, a, b, w, successors, domain)
        .map_or(0.0, |v| tape.scalar(v));
    Ok(Contribution { value, positions })
}

pub fn cross_domain_loss(
    h: &Mat,
    head_x: &Mat,
    head_y: &Mat,
    successors: &Successors,
) -> Result<Contribution> {
    check_rows(&[h], successors)?;
    check_targets(head_x, successors, Domain::X)?;
    check_targets(head_y, successors, Domain::Y)?;
    let mut tape = Tape::new();
    let (a, wx, wy) = (
        tape.constant(h.clone()),
        tape.constant(head_x.clone()),
        tape.constant(head_y.clone()),
    );
    let positions = successors.iter().flatten().count();
    let value =
        cross_domain_on_tape(&mut tape, a, wx, wy, successors).map_or(0.0, |v| tape.scalar(v));
    Ok(Contribution { value, positions })
}

/// The six terms of the combined objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub single_x: f64,
    pub single_y: f64,
    pub intra_x: f64,
    pub intra_y: f64,
    pub cross: f64,
    pub inter: f64,
}

/// Coefficients of (single_x, single_y, intra_x, intra_y, cross, inter).
pub fn coefficients(eta: f64, lambda1: f64, lambda2: f64) -> [f64; 6] {
    [
        eta,
        eta,
        eta * lambda1,
        eta * lambda1,
        1.0 - eta,
        (1.0 - eta) * lambda2,
    ]
}

/// `η(Ls_X + Ls_Y + λ1(L^X + L^Y)) + (1−η)(L_cross + λ2 L_inter)`.
pub fn total_loss(parts: &LossParts, eta: f64, lambda1: f64, lambda2: f64) -> f64 {
    eta * (parts.single_x + parts.single_y + lambda1 * (parts.intra_x + parts.intra_y))
        + (1.0 - eta) * (parts.cross + lambda2 * parts.inter)
}

/// Tape nodes for the six terms; absent terms contribute nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct PartVars {
    pub single_x: Option<Var>,
    pub single_y: Option<Var>,
    pub intra_x: Option<Var>,
    pub intra_y: Option<Var>,
    pub cross: Option<Var>,
    pub inter: Option<Var>,
}

impl PartVars {
    fn as_array(&self) -> [Option<Var>; 6] {
        [
            self.single_x,
            self.single_y,
            self.intra_x,
            self.intra_y,
            self.cross,
            self.inter,
        ]
    }

    pub fn values(&self, tape: &Tape) -> LossParts {
        let v = self.as_array().map(|p| p.map_or(0.0, |p| tape.scalar(p)));
        LossParts {
            single_x: v[0],
            single_y: v[1],
            intra_x: v[2],
            intra_y: v[3],
            cross: v[4],
            inter: v[5],
        }
    }
}

pub fn total_on_tape(
    tape: &mut Tape,
    parts: &PartVars,
    eta: f64,
    lambda1: f64,
    lambda2: f64,
) -> Var {
    let terms: Vec<(f64, Var)> = coefficients(eta, lambda1, lambda2)
        .into_iter()
        .zip(parts.as_array())
        .filter_map(|(c, p)| p.filter(|_| c != 0.0).map(|p| (c, p)))
        .collect();
    tape.weighted_sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eta_endpoints() {
        assert_eq!(anneal_eta(0, 50), 1.0);
        assert_eq!(anneal_eta(25, 50), 0.75);
        assert_eq!(anneal_eta(50, 50), 0.5);
        assert_eq!(anneal_eta(100, 50), 0.5);
    }

    #[test]
    fn all_ones_total() {
        let parts = LossParts {
            single_x: 1.0,
            single_y: 1.0,
            intra_x: 1.0,
            intra_y: 1.0,
            cross: 1.0,
            inter: 1.0,
        };
        assert!((total_loss(&parts, 0.5, 0.5, 0.5) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn single_class_loss_is_zero() {
        let h = array![[0.3, 0.1]];
        let w = array![[1.0], [2.0]];
        let c = single_domain_loss(&h, &h, &w, &[Some((Domain::X, 0))], Domain::X).unwrap();
        assert_eq!(c.positions, 1);
        assert!(c.value.abs() < 1e-15);
    }

    #[test]
    fn no_contributing_positions_is_flagged() {
        let h = array![[0.3, 0.1]];
        let w = array![[1.0, 0.0], [2.0, 1.0]];
        let c = single_domain_loss(&h, &h, &w, &[Some((Domain::Y, 0))], Domain::X).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.value, 0.0);
        let c = cross_domain_loss(&h, &w, &w, &[None]).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn target_outside_head_is_rejected() {
        let h = array![[0.3, 0.1]];
        let w = array![[1.0], [2.0]];
        assert!(single_domain_loss(&h, &h, &w, &[Some((Domain::X, 3))], Domain::X).is_err());
    }
}

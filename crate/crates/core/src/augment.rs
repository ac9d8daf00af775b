//! Sequence-aware feature augmentation.
//!
//! A per-domain gated recurrent encoder summarizes a user's domain view,
//! two perceptrons map that summary to the mean and scale of a Gaussian, and
//! reparameterized noise from it perturbs the propagated item table. The
//! perturbed rows are contrasted with the clean ones by InfoNCE.

use std::sync::Arc;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::nn::{self, Gru};
use crate::params::{Bound, ParameterSet};
use crate::tape::{Mat, Tape, Var};

/// Added to the softplus output of the scale network.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Guard for L2 normalization of all-zero rows.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub alpha: f64,
    pub tau: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            tau: 0.2,
        }
    }
}

pub fn noise_prefix(domain: Domain) -> String {
    format!("noise.{}", domain.lower())
}

/// Final encoder state for each of `views` (local item indices, `None` at
/// padding). All views must have the same length. Padding positions are
/// skipped; an all-padding view yields the zero state.
pub fn encode_batch(
    tape: &mut Tape,
    p: &Bound,
    domain: Domain,
    item_reps: Var,
    views: &[Vec<Option<usize>>],
) -> Var {
    let seq_len = views.first().map_or(0, Vec::len);
    let index: Vec<Option<usize>> = views.iter().flatten().copied().collect();
    let valid: Vec<bool> = index.iter().map(Option::is_some).collect();
    let inputs = tape.gather(item_reps, Arc::new(index));
    let gru = Gru::bind(p, &format!("{}.gru", noise_prefix(domain)));
    let (_, last) = gru.run(tape, inputs, views.len(), seq_len, &valid);
    last
}

/// `β = μ(h) + ε ⊙ σ(h)` with `σ = softplus(·) + SIGMA_FLOOR`.
pub fn noise_on_tape(tape: &mut Tape, p: &Bound, domain: Domain, h: Var, eps: Mat) -> Var {
    let prefix = noise_prefix(domain);
    let mu = nn::mlp(tape, p, &format!("{prefix}.mu"), h);
    let s = nn::mlp(tape, p, &format!("{prefix}.sigma"), h);
    let s = tape.softplus(s);
    let sigma = tape.affine(s, 1.0, SIGMA_FLOOR);
    let eps = tape.constant(eps);
    let scaled = tape.mul(eps, sigma);
    tape.add(mu, scaled)
}

/// `-Σ_i log softmax_j(cos(a_i, p_j) / τ)[i]` over the rows of `anchor` and
/// `positive`.
pub fn infonce_on_tape(tape: &mut Tape, anchor: Var, positive: Var, tau: f64) -> Var {
    let m = tape.shape(anchor).0;
    let a = tape.row_normalize(anchor, COSINE_EPS);
    let b = tape.row_normalize(positive, COSINE_EPS);
    let bt = tape.transpose(b);
    let sim = tape.matmul(a, bt);
    let logits = tape.scale(sim, 1.0 / tau);
    tape.cross_entropy(logits, (0..m).collect(), 1.0)
}

/// Final hidden state of the domain's noise encoder over the non-padding
/// entries of `seq`, in order, starting from a zero state.
pub fn encode_sequence(
    params: &ParameterSet,
    domain: Domain,
    item_reps: &Mat,
    seq: &[Option<usize>],
) -> Result<Array1<f64>> {
    if seq.iter().all(Option::is_none) {
        return Err(Error::InvalidArgument("sequence is all padding".into()));
    }
    if let Some(bad) = seq.iter().flatten().find(|&&i| i >= item_reps.nrows()) {
        return Err(Error::Shape(format!("item {bad} outside table")));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let reps = tape.constant(item_reps.clone());
    let h = encode_batch(&mut tape, &p, domain, reps, &[seq.to_vec()]);
    Ok(tape.value(h).row(0).to_owned())
}

pub fn sample_noise(
    params: &ParameterSet,
    domain: Domain,
    h: &Array1<f64>,
    eps: &Array1<f64>,
) -> Array1<f64> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let hv = tape.constant(h.clone().insert_axis(ndarray::Axis(0)));
    let eps = eps.clone().insert_axis(ndarray::Axis(0));
    let beta = noise_on_tape(&mut tape, &p, domain, hv, eps);
    tape.value(beta).row(0).to_owned()
}

/// `Ê + α β`, row-wise.
pub fn augment_items(e_hat: &Mat, beta: &Mat, alpha: f64) -> Result<Mat> {
    if e_hat.dim() != beta.dim() {
        return Err(Error::Shape(format!(
            "items {:?} vs noise {:?}",
            e_hat.dim(),
            beta.dim()
        )));
    }
    Ok(e_hat + &(beta * alpha))
}

pub fn intra_infonce(anchor: &Mat, positive: &Mat, tau: f64) -> Result<f64> {
    if anchor.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "InfoNCE needs at least one row".into(),
        ));
    }
    if anchor.dim() != positive.dim() {
        return Err(Error::Shape(format!(
            "anchor {:?} vs positive {:?}",
            anchor.dim(),
            positive.dim()
        )));
    }
    let mut tape = Tape::new();
    let a = tape.constant(anchor.clone());
    let p = tape.constant(positive.clone());
    let loss = infonce_on_tape(&mut tape, a, p, tau);
    Ok(tape.scalar(loss))
}

/// Unique items across `views` in first-occurrence order (sequence order,
/// then position order), capped at `cap`, with the index of the view each
/// was first seen in.
pub fn first_occurrences(views: &[Vec<Option<usize>>], cap: usize) -> (Vec<usize>, Vec<usize>) {
    let mut seen = std::collections::HashSet::new();
    let mut items = Vec::new();
    let mut owners = Vec::new();
    'outer: for (s, view) in views.iter().enumerate() {
        for &item in view.iter().flatten() {
            if items.len() == cap {
                break 'outer;
            }
            if seen.insert(item) {
                items.push(item);
                owners.push(s);
            }
        }
    }
    (items, owners)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use crate::trainer::HyperParams;
    use ndarray::array;

    fn params(d: usize) -> ParameterSet {
        let hp = HyperParams {
            dim: d,
            max_len: 4,
            ..HyperParams::default()
        };
        init_params(&hp, 5, 5, 11)
    }

    #[test]
    fn orthonormal_pairs_closed_form() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = intra_infonce(&a, &a, 0.2).unwrap();
        let expected = -2.0 * (5f64.exp() / (5f64.exp() + 1.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.01343).abs() < 1e-5);
    }

    #[test]
    fn single_row_loss_is_zero() {
        let a = array![[0.3, -1.0, 2.0]];
        let p = array![[5.0, 1.0, 0.0]];
        assert!(intra_infonce(&a, &p, 0.2).unwrap().abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(intra_infonce(&Mat::zeros((0, 3)), &Mat::zeros((0, 3)), 0.2).is_err());
    }

    #[test]
    fn zero_rows_do_not_produce_nan() {
        let a = Mat::zeros((3, 4));
        let loss = intra_infonce(&a, &a, 0.2).unwrap();
        assert!((loss - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_and_unit_noise() {
        let e = array![[1.0, 2.0], [3.0, 4.0]];
        let ones = Mat::ones((2, 2));
        assert_eq!(augment_items(&e, &ones, 0.0).unwrap(), e);
        let shifted = augment_items(&e, &ones, 0.1).unwrap();
        assert!(shifted
            .iter()
            .zip(e.iter())
            .all(|(s, x)| (s - x - 0.1).abs() < 1e-15));
        assert!(augment_items(&e, &Mat::ones((3, 2)), 0.1).is_err());
    }

    #[test]
    fn zero_eps_gives_mean() {
        let p = params(4);
        let h = array![0.1, -0.2, 0.3, 0.05];
        let with_eps = sample_noise(&p, Domain::X, &h, &Array1::zeros(4));
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let hv = tape.constant(h.clone().insert_axis(ndarray::Axis(0)));
        let mu = nn::mlp(&mut tape, &b, "noise.x.mu", hv);
        assert_eq!(tape.value(mu).row(0), with_eps);
    }

    #[test]
    fn zeroed_sigma_network_uses_floor() {
        let mut p = params(4);
        for name in ["l1.w", "l1.b", "l2.w", "l2.b"] {
            p.get_mut(&format!("noise.y.sigma.{name}"))
                .unwrap()
                .fill(0.0);
        }
        let h = array![0.4, 0.1, -0.3, 0.2];
        let eps = array![1.0, -2.0, 0.5, 3.0];
        let mu = sample_noise(&p, Domain::Y, &h, &Array1::zeros(4));
        let beta = sample_noise(&p, Domain::Y, &h, &eps);
        let s0 = 2f64.ln() + SIGMA_FLOOR;
        for i in 0..4 {
            assert!((beta[i] - (mu[i] + s0 * eps[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn all_pad_sequence_is_rejected() {
        let p = params(4);
        let reps = Mat::ones((5, 4));
        assert!(encode_sequence(&p, Domain::X, &reps, &[None, None]).is_err());
    }

    #[test]
    fn leading_pads_do_not_change_state() {
        let p = params(4);
        let reps = Mat::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.1);
        let a = encode_sequence(&p, Domain::X, &reps, &[Some(1), Some(3)]).unwrap();
        let b =
            encode_sequence(&p, Domain::X, &reps, &[None, None, Some(1), None, Some(3)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_occurrence_wins() {
        let views = vec![vec![None, Some(3), Some(1)], vec![Some(1), Some(4), None]];
        let (items, owners) = first_occurrences(&views, 512);
        assert_eq!(items, vec![3, 1, 4]);
        assert_eq!(owners, vec![0, 0, 1]);
        let (items, _) = first_occurrences(&views, 2);
        assert_eq!(items, vec![3, 1]);
    }
}

//! One mini-batch of the combined objective on a tape.

use ndarray::{Array1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::augment::{encode_batch, first_occurrences, infonce_on_tape, noise_on_tape};
use crate::corpus::{truncate_pad, CrossDomainSequence, Domain};
use crate::error::Result;
use crate::graph::Graphs;
use crate::objective::{cross_domain_on_tape, single_domain_on_tape, total_on_tape, PartVars};
use crate::params::Bound;
use crate::seqmodel::{propagated_tables, raw_tables, user_states_on_tape, SequenceBatch};
use crate::spectrum::{filter_mean_name, filter_on_tape, inter_infonce_on_tape};
use crate::tape::{Mat, Tape, Var};

use super::HyperParams;

/// Windows, next-item targets and contrastive anchors of one mini-batch.
#[derive(Clone, Debug)]
pub struct StepInputs {
    pub batch: SequenceBatch,
    /// Successor of each flattened slot (`b·N + t`).
    pub successors: Vec<Option<(Domain, usize)>>,
    /// Per domain: unique local items in first-occurrence order and the
    /// window each was first seen in.
    pub anchors: [(Vec<usize>, Vec<usize>); 2],
}

fn slot(domain: Domain) -> usize {
    match domain {
        Domain::X => 0,
        Domain::Y => 1,
    }
}

impl StepInputs {
    /// Each sequence keeps its last `N + 1` items; the first `N` of those
    /// (left-padded) are the inputs and each input slot's target is the item
    /// after it. Sequences shorter than two items are dropped.
    pub fn assemble(sequences: &[&CrossDomainSequence], hp: &HyperParams) -> Result<Option<Self>> {
        let n = hp.max_len;
        let mut windows = Vec::new();
        let mut successors = Vec::new();
        for seq in sequences.iter().filter(|s| s.len() >= 2) {
            let items = &seq.items[seq.len().saturating_sub(n + 1)..];
            let inputs = &items[..items.len() - 1];
            let pad = n - inputs.len();
            windows.push(truncate_pad(inputs, n));
            successors.extend(std::iter::repeat_n(None, pad));
            successors.extend(items[1..].iter().map(|i| Some((i.domain, i.local))));
        }
        if windows.is_empty() {
            return Ok(None);
        }
        let batch = SequenceBatch::new(windows)?;
        let anchors =
            Domain::BOTH.map(|d| first_occurrences(&batch.domain_views(d), hp.contrast_cap));
        Ok(Some(Self {
            batch,
            successors,
            anchors,
        }))
    }

    pub fn anchors(&self, domain: Domain) -> (&[usize], &[usize]) {
        let (items, owners) = &self.anchors[slot(domain)];
        (items, owners)
    }
}

/// Standard-normal draws used by one step: per-anchor noise and one
/// filter perturbation per domain.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    pub anchor_eps: [Mat; 2],
    pub filter_eps: [Array1<f64>; 2],
}

impl StepNoise {
    pub fn sample(rng: &mut impl Rng, inputs: &StepInputs, dim: usize) -> Self {
        let anchor_eps = Domain::BOTH.map(|d| {
            let m = inputs.anchors(d).0.len();
            Mat::from_shape_simple_fn((m, dim), || rng.sample(StandardNormal))
        });
        let filter_eps =
            Domain::BOTH.map(|_| Array1::from_shape_simple_fn(dim, || rng.sample(StandardNormal)));
        Self {
            anchor_eps,
            filter_eps,
        }
    }

    pub fn zeros(inputs: &StepInputs, dim: usize) -> Self {
        Self {
            anchor_eps: Domain::BOTH.map(|d| Mat::zeros((inputs.anchors(d).0.len(), dim))),
            filter_eps: Domain::BOTH.map(|_| Array1::zeros(dim)),
        }
    }
}

/// The assembled objective of one step.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub parts: PartVars,
    /// Per domain, whether the sampled filter was degenerate.
    pub degenerate: [bool; 2],
}

/// Builds the combined objective for one mini-batch at annealing factor
/// `eta`. Dropout is applied when `dropout_rng` is given.
#[allow(clippy::too_many_arguments)]
pub fn build_objective<R: Rng>(
    tape: &mut Tape,
    p: &Bound,
    hp: &HyperParams,
    graphs: &Graphs,
    n_x: usize,
    inputs: &StepInputs,
    noise: &StepNoise,
    eta: f64,
    dropout_rng: Option<&mut R>,
) -> Objective {
    let emb = p.get("emb");
    let generation = hp.generation_active();
    let alignment = hp.alignment_active();
    let needs_graph = hp.encoder.kind.uses_propagation() || generation || alignment;
    let propagated =
        needs_graph.then(|| propagated_tables(tape, emb, n_x, graphs, hp.propagation()));
    let enc_tables = match propagated {
        Some(t) if hp.encoder.kind.uses_propagation() => t,
        _ => raw_tables(tape, emb, n_x),
    };

    let states = user_states_on_tape(
        tape,
        p,
        &hp.encoder,
        &enc_tables,
        &inputs.batch,
        dropout_rng,
    );
    let succ = &inputs.successors;
    let (head_x, head_y) = (p.get("head.x"), p.get("head.y"));
    let mut parts = PartVars {
        single_x: single_domain_on_tape(tape, states.x, states.mixed, head_x, succ, Domain::X),
        single_y: single_domain_on_tape(tape, states.y, states.mixed, head_y, succ, Domain::Y),
        cross: cross_domain_on_tape(tape, states.mixed, head_x, head_y, succ),
        ..PartVars::default()
    };

    let mut degenerate = [false; 2];
    if let Some(prop) = propagated.filter(|_| generation || alignment) {
        let mut pairs = Vec::new();
        for domain in Domain::BOTH {
            let (items, owners) = inputs.anchors(domain);
            if items.is_empty() {
                continue;
            }
            let local = tape.gather_rows(prop.domain(domain), items);
            let augmented = if generation {
                let eps = noise.anchor_eps[slot(domain)].clone();
                let beta = if hp.ablation.std_normal_noise {
                    tape.constant(eps)
                } else {
                    let mut owner_ids: Vec<usize> = owners.to_vec();
                    owner_ids.dedup();
                    let views = inputs.batch.domain_views(domain);
                    let owned: Vec<_> = owner_ids.iter().map(|&o| views[o].clone()).collect();
                    let h = encode_batch(tape, p, domain, prop.domain(domain), &owned);
                    let per_anchor: Vec<usize> = owners
                        .iter()
                        .map(|o| owner_ids.binary_search(o).expect("owner listed"))
                        .collect();
                    let h = tape.gather_rows(h, &per_anchor);
                    noise_on_tape(tape, p, domain, h, eps)
                };
                let shift = tape.scale(beta, hp.alpha);
                let augmented = tape.add(local, shift);
                let intra = infonce_on_tape(tape, local, augmented, hp.tau);
                match domain {
                    Domain::X => parts.intra_x = Some(intra),
                    Domain::Y => parts.intra_y = Some(intra),
                }
                augmented
            } else {
                local
            };
            if alignment {
                let global = if hp.ablation.no_asf {
                    prop.global
                } else {
                    let eps = noise.filter_eps[slot(domain)].clone().insert_axis(Axis(0));
                    let eps = tape.constant(eps);
                    let v = tape.add(p.get(&filter_mean_name(domain)), eps);
                    let (filtered, flag) = filter_on_tape(tape, prop.global, v);
                    degenerate[slot(domain)] = flag;
                    filtered
                };
                let offset = if domain == Domain::X { 0 } else { n_x };
                let rows: Vec<usize> = items.iter().map(|i| i + offset).collect();
                let global_rows = tape.gather_rows(global, &rows);
                pairs.push((global_rows, augmented));
            }
        }
        if alignment {
            parts.inter = inter_infonce_on_tape(tape, &pairs, hp.tau);
        }
    }

    let lambda1 = if generation { hp.lambda1 } else { 0.0 };
    let lambda2 = if alignment { hp.lambda2 } else { 0.0 };
    let total = total_on_tape(tape, &parts, eta, lambda1, lambda2);
    Objective {
        total,
        parts,
        degenerate,
    }
}

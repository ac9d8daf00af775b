use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::step::{build_objective, StepInputs, StepNoise};
use super::HyperParams;
use crate::corpus::CrossDomainSequence;
use crate::error::{Error, Result};
use crate::graph::Graphs;
use crate::params::{init_params, ParameterSet};
use crate::tape::Tape;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;
/// Half-width of the uniform offset added to every initial parameter.
pub const JITTER: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub entries: usize,
    pub max_abs_grad: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn objective_value(
    params: &ParameterSet,
    hp: &HyperParams,
    graphs: &Graphs,
    n_x: usize,
    inputs: &StepInputs,
    noise: &StepNoise,
    eta: f64,
) -> f64 {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let obj =
        build_objective::<ChaCha8Rng>(&mut tape, &p, hp, graphs, n_x, inputs, noise, eta, None);
    tape.scalar(obj.total)
}

/// Compares the analytic gradient of the combined objective on one batch
/// with central differences, for every scalar of every parameter tensor.
/// Dropout is disabled; the noise draws are fixed by `hp.seed`.
///
/// Zero-initialized biases put padding rows exactly on the ReLU kink, where
/// central differences see half the slope, so every parameter is offset by
/// a seeded uniform draw in `±JITTER` first.
pub fn grad_check(
    hp: &HyperParams,
    graphs: &Graphs,
    n_x: usize,
    n_y: usize,
    batch: &[CrossDomainSequence],
    eta: f64,
) -> Result<GradCheckReport> {
    let mut hp = hp.clone();
    hp.encoder.dropout = 0.0;
    hp.validate()?;
    let seqs: Vec<&CrossDomainSequence> = batch.iter().collect();
    let inputs = StepInputs::assemble(&seqs, &hp)?
        .ok_or_else(|| Error::InvalidArgument("batch has no sequence of length two".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let noise = StepNoise::sample(&mut rng, &inputs, hp.dim);
    let mut params = init_params(&hp, n_x, n_y, hp.seed);
    let mut jitter = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5eed);
    for t in params.tensors_mut() {
        t.mapv_inplace(|x| x + jitter.random_range(-JITTER..JITTER));
    }

    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true);
    let obj =
        build_objective::<ChaCha8Rng>(&mut tape, &p, &hp, graphs, n_x, &inputs, &noise, eta, None);
    let loss = tape.scalar(obj.total);
    let grads = tape.backward(obj.total);
    let analytic: Vec<_> = p
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.dim()))
        .collect();
    drop(p);

    let mut groups = Vec::new();
    for (i, a) in analytic.iter().enumerate() {
        let name = params.names()[i].clone();
        let mut max_rel: f64 = 0.0;
        let (rows, cols) = a.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = params.tensors()[i][[r, c]];
                params.tensors_mut()[i][[r, c]] = orig + FD_STEP;
                let up = objective_value(&params, &hp, graphs, n_x, &inputs, &noise, eta);
                params.tensors_mut()[i][[r, c]] = orig - FD_STEP;
                let down = objective_value(&params, &hp, graphs, n_x, &inputs, &noise, eta);
                params.tensors_mut()[i][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                max_rel = max_rel.max(relative_error(a[[r, c]], numeric));
            }
        }
        groups.push(GroupError {
            name,
            entries: a.len(),
            max_abs_grad: a.iter().fold(0.0, |m, g| m.max(g.abs())),
            max_rel_error: max_rel,
        });
    }
    let max_rel_error = groups.iter().fold(0.0_f64, |m, g| m.max(g.max_rel_error));
    Ok(GradCheckReport {
        loss,
        groups,
        max_rel_error,
    })
}

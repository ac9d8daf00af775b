use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{round_f32, Adam};
use super::checkpoint::{Checkpoint, Manifest, RngRecord};
use super::step::{build_objective, StepInputs, StepNoise};
use super::HyperParams;
use crate::corpus::{CrossDomainSequence, EvalInstance, Partition};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, MetricsReport, ModelView};
use crate::graph::Graphs;
use crate::objective::LossParts;
use crate::params::{init_params, ParameterSet};
use crate::tape::{Mat, Tape};

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParameterSet,
    pub adam: Adam,
    /// Epochs completed.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(hp: &HyperParams, n_x: usize, n_y: usize) -> Self {
        let mut params = init_params(hp, n_x, n_y, hp.seed);
        params.tensors_mut().iter_mut().for_each(round_f32);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(1);
        Self {
            adam: Adam::new(&params, hp.lr),
            params,
            epoch: 0,
            rng,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let rng = match &ckpt.manifest.rng {
            Some(r) => r.restore()?,
            None => return Err(Error::Checkpoint("checkpoint has no rng state".into())),
        };
        Ok(Self {
            params: ckpt.params.clone(),
            adam: ckpt.adam(),
            epoch: ckpt.manifest.epoch,
            rng,
        })
    }

    pub fn to_checkpoint(&self, hp: &HyperParams, n_x: usize, n_y: usize) -> Checkpoint {
        Checkpoint {
            manifest: Manifest {
                hyperparams: hp.clone(),
                n_x,
                n_y,
                epoch: self.epoch,
                best_epoch: None,
                best_val_mrr: None,
                adam_step: self.adam.t,
                rng: Some(RngRecord::capture(&self.rng)),
                metrics: None,
            },
            params: self.params.clone(),
            moments: Some((self.adam.m.clone(), self.adam.v.clone())),
            global_override: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0-based epoch index.
    pub epoch: usize,
    pub eta: f64,
    pub steps: usize,
    /// Mean over steps of the combined objective and of each term.
    pub loss: f64,
    pub parts: LossParts,
    pub degenerate_filters: usize,
    pub val_mrr: Option<f64>,
    pub val: Option<MetricsReport>,
    pub seconds: f64,
}

/// Runs one pass over `train` in a shuffled order and returns its record
/// (without validation fields).
pub fn train_epoch(
    state: &mut TrainState,
    hp: &HyperParams,
    graphs: &Graphs,
    n_x: usize,
    train: &[CrossDomainSequence],
) -> Result<EpochRecord> {
    let start = Instant::now();
    let eta = hp.eta(state.epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut state.rng);
    let mut record = EpochRecord {
        epoch: state.epoch,
        eta,
        steps: 0,
        loss: 0.0,
        parts: LossParts::default(),
        degenerate_filters: 0,
        val_mrr: None,
        val: None,
        seconds: 0.0,
    };
    for chunk in order.chunks(hp.batch_size) {
        let seqs: Vec<&CrossDomainSequence> = chunk.iter().map(|&i| &train[i]).collect();
        let Some(inputs) = StepInputs::assemble(&seqs, hp)? else {
            continue;
        };
        let noise = StepNoise::sample(&mut state.rng, &inputs, hp.dim);
        let mut tape = Tape::new();
        let p = state.params.bind(&mut tape, true);
        let dropout = (hp.encoder.dropout > 0.0).then_some(&mut state.rng);
        let obj = build_objective(
            &mut tape, &p, hp, graphs, n_x, &inputs, &noise, eta, dropout,
        );
        let total = tape.scalar(obj.total);
        let parts = obj.parts.values(&tape);
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: state.epoch,
                step: record.steps,
                dump: format!("total={total} parts={parts:?} eta={eta}"),
            });
        }
        let grads = tape.backward(obj.total);
        let g: Vec<Mat> = p
            .vars()
            .iter()
            .zip(state.params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.dim()))
            .collect();
        drop(p);
        state.adam.step(&mut state.params, &g);

        record.steps += 1;
        record.loss += total;
        let acc = &mut record.parts;
        acc.single_x += parts.single_x;
        acc.single_y += parts.single_y;
        acc.intra_x += parts.intra_x;
        acc.intra_y += parts.intra_y;
        acc.cross += parts.cross;
        acc.inter += parts.inter;
        record.degenerate_filters += obj.degenerate.iter().filter(|&&d| d).count();
    }
    if record.steps > 0 {
        let k = record.steps as f64;
        record.loss /= k;
        let acc = &mut record.parts;
        for x in [
            &mut acc.single_x,
            &mut acc.single_y,
            &mut acc.intra_x,
            &mut acc.intra_y,
            &mut acc.cross,
            &mut acc.inter,
        ] {
            *x /= k;
        }
    }
    state.epoch += 1;
    record.seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Patience counter over a validation score where higher is better and
/// only strict improvements count.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records a score; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience && self.best.is_some()
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Snapshot at the best validation epoch (the last epoch when there is
    /// no validation set).
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Trains for up to `hp.max_epochs` epochs, scoring the validation
/// instances after each one by the mean of the two domains' MRR.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    hp: &HyperParams,
    graphs: &Graphs,
    n_x: usize,
    n_y: usize,
    train: &[CrossDomainSequence],
    val: &[EvalInstance],
    mut progress: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus("no training sequences".into()));
    }
    let mut state = TrainState::new(hp, n_x, n_y);
    let mut stopper = EarlyStopping::new(hp.patience);
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stopped_early = false;
    for _ in 0..hp.max_epochs {
        let mut record = train_epoch(&mut state, hp, graphs, n_x, train)?;
        let report = if val.is_empty() {
            None
        } else {
            let view = ModelView {
                params: &state.params,
                hp,
                n_x,
                global_override: None,
            };
            Some(evaluate(&view, graphs, val, Partition::Val)?)
        };
        record.val_mrr = report.as_ref().map(MetricsReport::mean_mrr);
        record.val = report;
        let improved = match record.val_mrr {
            Some(score) => stopper.observe(record.epoch, score),
            None => true,
        };
        if improved {
            let mut ckpt = state.to_checkpoint(hp, n_x, n_y);
            ckpt.manifest.best_epoch = Some(record.epoch);
            ckpt.manifest.best_val_mrr = record.val_mrr;
            ckpt.manifest.metrics = record.val.as_ref().map(serde_json::to_value).transpose()?;
            best = Some(ckpt);
        }
        progress(&record);
        history.push(record);
        if !val.is_empty() && stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }
    Ok(FitResult {
        best: best.expect("at least one epoch"),
        history,
        stopped_early,
    })
}

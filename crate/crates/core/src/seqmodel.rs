//! Causal sequence encoders producing mixed and single-domain user states.
//!
//! A batch is `B` windows of `N` slots flattened to `B·N` rows (row
//! `b·N + t`). Every encoder kind reads the same three views of a window:
//! the mixed sequence and the two domain views in which foreign items are
//! padding. All three views go through one shared set of encoder weights.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, PaddedSequence};
use crate::error::{Error, Result};
use crate::graph::{propagate_on_tape, Graphs, PropagationConfig};
use crate::nn::{self, Gru};
use crate::params::{Bound, ParameterSet};
use crate::tape::{AttentionShape, Mat, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Self-attention over graph-propagated item tables.
    #[default]
    GnnAtt,
    /// Self-attention over the raw item tables.
    AttentionOnly,
    /// Gated recurrent unit over the raw item tables.
    Recurrent,
}

impl EncoderKind {
    pub fn uses_propagation(self) -> bool {
        self == EncoderKind::GnnAtt
    }

    pub fn uses_positions(self) -> bool {
        self != EncoderKind::Recurrent
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gnn-att" => Ok(EncoderKind::GnnAtt),
            "attention-only" => Ok(EncoderKind::AttentionOnly),
            "recurrent" => Ok(EncoderKind::Recurrent),
            _ => Err(Error::InvalidArgument(format!(
                "unknown encoder kind {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub blocks: usize,
    pub heads: usize,
    /// Feed-forward width; the model width when unset.
    pub ff_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::GnnAtt,
            blocks: 2,
            heads: 2,
            ff_dim: None,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.kind.uses_positions() && (self.heads == 0 || !dim.is_multiple_of(self.heads)) {
            return Err(Error::InvalidArgument(format!(
                "width {dim} is not divisible by {} heads",
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        if self.ff_dim == Some(0) {
            return Err(Error::InvalidArgument(
                "feed-forward width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Mixed,
    Domain(Domain),
}

/// `B` padded windows of equal length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceBatch {
    windows: Vec<PaddedSequence>,
    seq_len: usize,
}

impl SequenceBatch {
    pub fn new(windows: Vec<PaddedSequence>) -> Result<Self> {
        let seq_len = windows.first().map_or(0, PaddedSequence::len);
        if seq_len == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if windows.iter().any(|w| w.len() != seq_len) {
            return Err(Error::Shape("windows differ in length".into()));
        }
        Ok(Self { windows, seq_len })
    }

    pub fn batch(&self) -> usize {
        self.windows.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn windows(&self) -> &[PaddedSequence] {
        &self.windows
    }

    pub fn shape(&self, heads: usize) -> AttentionShape {
        AttentionShape {
            batch: self.batch(),
            seq_len: self.seq_len,
            heads,
        }
    }

    /// Row indices into the view's table, flattened as `b·N + t`.
    pub fn index(&self, view: View) -> Vec<Option<usize>> {
        self.windows
            .iter()
            .flat_map(|w| match view {
                View::Mixed => w.mixed(),
                View::Domain(d) => w.view(d),
            })
            .collect()
    }

    /// Per-window domain views, as fed to the noise encoder.
    pub fn domain_views(&self, domain: Domain) -> Vec<Vec<Option<usize>>> {
        self.windows.iter().map(|w| w.view(domain)).collect()
    }
}

/// Item tables on a tape: the mixed table and the two domain tables.
#[derive(Clone, Copy, Debug)]
pub struct ItemTables {
    pub global: Var,
    pub x: Var,
    pub y: Var,
}

impl ItemTables {
    pub fn domain(&self, domain: Domain) -> Var {
        match domain {
            Domain::X => self.x,
            Domain::Y => self.y,
        }
    }

    pub fn for_view(&self, view: View) -> Var {
        match view {
            View::Mixed => self.global,
            View::Domain(d) => self.domain(d),
        }
    }
}

/// Row ranges of the shared item table, without propagation.
pub fn raw_tables(tape: &mut Tape, emb: Var, n_x: usize) -> ItemTables {
    let n = tape.shape(emb).0;
    ItemTables {
        global: emb,
        x: tape.slice_rows(emb, 0, n_x),
        y: tape.slice_rows(emb, n_x, n - n_x),
    }
}

/// Domain tables propagated over their own graphs and the full table over
/// the mixed graph.
pub fn propagated_tables(
    tape: &mut Tape,
    emb: Var,
    n_x: usize,
    graphs: &Graphs,
    cfg: PropagationConfig,
) -> ItemTables {
    let raw = raw_tables(tape, emb, n_x);
    ItemTables {
        global: propagate_on_tape(tape, &graphs.mixed, raw.global, cfg),
        x: propagate_on_tape(tape, &graphs.x, raw.x, cfg),
        y: propagate_on_tape(tape, &graphs.y, raw.y, cfg),
    }
}

/// Inverted dropout with a fixed mask drawn from `rng`.
pub struct Dropout<'r, R: Rng> {
    pub rate: f64,
    pub rng: &'r mut R,
}

impl<R: Rng> Dropout<'_, R> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate == 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x);
        let mask = Mat::from_shape_simple_fn(shape, || {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mask = tape.constant(mask);
        tape.mul(x, mask)
    }
}

fn maybe_dropout<R: Rng>(tape: &mut Tape, dropout: &mut Option<Dropout<'_, R>>, x: Var) -> Var {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => x,
    }
}

/// Input rows for one view: table rows at items, zero at padding, plus the
/// positional row of each non-padding slot.
pub fn embed_on_tape(
    tape: &mut Tape,
    p: &Bound,
    kind: EncoderKind,
    tables: &ItemTables,
    batch: &SequenceBatch,
    view: View,
) -> Var {
    let index = batch.index(view);
    let n = batch.seq_len();
    let positions: Vec<Option<usize>> = index
        .iter()
        .enumerate()
        .map(|(r, i)| i.map(|_| r % n))
        .collect();
    let items = tape.gather(tables.for_view(view), Arc::new(index));
    if !kind.uses_positions() {
        return items;
    }
    let pos = tape.gather(p.get("enc.pos"), Arc::new(positions));
    tape.add(items, pos)
}

/// Encoder states for `B·N` input rows. `valid[r]` marks non-padding rows.
pub fn forward_on_tape<R: Rng>(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    inputs: Var,
    shape: AttentionShape,
    valid: &[bool],
    mut dropout: Option<Dropout<'_, R>>,
) -> Var {
    if cfg.kind == EncoderKind::Recurrent {
        let gru = Gru::bind(p, "enc.gru");
        let x = maybe_dropout(tape, &mut dropout, inputs);
        let (states, _) = gru.run(tape, x, shape.batch, shape.seq_len, valid);
        return states;
    }
    let mut x = maybe_dropout(tape, &mut dropout, inputs);
    for b in 0..cfg.blocks {
        let name = |part: &str| format!("enc.b{b}.{part}");
        let a = nn::layer_norm(tape, p, &name("ln1"), x);
        let q = nn::linear(tape, p, &name("wq"), a);
        let k = nn::linear(tape, p, &name("wk"), a);
        let v = nn::linear(tape, p, &name("wv"), a);
        let att = tape.causal_attention(q, k, v, shape, valid);
        let o = nn::linear(tape, p, &name("wo"), att);
        let o = maybe_dropout(tape, &mut dropout, o);
        x = tape.add(x, o);

        let f = nn::layer_norm(tape, p, &name("ln2"), x);
        let f = nn::linear(tape, p, &name("ff1"), f);
        let f = tape.relu(f);
        let f = nn::linear(tape, p, &name("ff2"), f);
        let f = maybe_dropout(tape, &mut dropout, f);
        x = tape.add(x, f);
    }
    nn::layer_norm(tape, p, "enc.ln_f", x)
}

/// States for the mixed view and both domain views.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub mixed: Var,
    pub x: Var,
    pub y: Var,
}

impl StateVars {
    pub fn domain(&self, domain: Domain) -> Var {
        match domain {
            Domain::X => self.x,
            Domain::Y => self.y,
        }
    }
}

pub fn user_states_on_tape<R: Rng>(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    tables: &ItemTables,
    batch: &SequenceBatch,
    mut rng: Option<&mut R>,
) -> StateVars {
    let mut run = |tape: &mut Tape, view: View| {
        let inputs = embed_on_tape(tape, p, cfg.kind, tables, batch, view);
        let valid: Vec<bool> = batch.index(view).iter().map(Option::is_some).collect();
        let dropout = rng.as_deref_mut().map(|rng| Dropout {
            rate: cfg.dropout,
            rng,
        });
        forward_on_tape(
            tape,
            p,
            cfg,
            inputs,
            batch.shape(cfg.heads),
            &valid,
            dropout,
        )
    };
    StateVars {
        mixed: run(tape, View::Mixed),
        x: run(tape, View::Domain(Domain::X)),
        y: run(tape, View::Domain(Domain::Y)),
    }
}

/// Plain item tables: the mixed table and the two domain tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Tables {
    pub global: Mat,
    pub x: Mat,
    pub y: Mat,
}

impl Tables {
    fn to_tape(&self, tape: &mut Tape) -> ItemTables {
        ItemTables {
            global: tape.constant(self.global.clone()),
            x: tape.constant(self.x.clone()),
            y: tape.constant(self.y.clone()),
        }
    }

    fn check(&self, batch: &SequenceBatch) -> Result<()> {
        for (view, table) in [
            (View::Mixed, &self.global),
            (View::Domain(Domain::X), &self.x),
            (View::Domain(Domain::Y), &self.y),
        ] {
            if let Some(bad) = batch
                .index(view)
                .into_iter()
                .flatten()
                .find(|&i| i >= table.nrows())
            {
                return Err(Error::Shape(format!(
                    "item {bad} outside a table of {}",
                    table.nrows()
                )));
            }
        }
        Ok(())
    }
}

/// `B·N × d` input rows for one view (no dropout).
pub fn embed_sequence(
    params: &ParameterSet,
    kind: EncoderKind,
    tables: &Tables,
    batch: &SequenceBatch,
    view: View,
) -> Result<Mat> {
    tables.check(batch)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let t = tables.to_tape(&mut tape);
    let out = embed_on_tape(&mut tape, &p, kind, &t, batch, view);
    Ok(tape.value(out).clone())
}

/// Encoder states without dropout.
pub fn forward(
    params: &ParameterSet,
    cfg: &EncoderConfig,
    inputs: &Mat,
    shape: AttentionShape,
    valid: &[bool],
) -> Result<Mat> {
    if inputs.nrows() != shape.batch * shape.seq_len || valid.len() != inputs.nrows() {
        return Err(Error::Shape(format!(
            "{} input rows for a {}×{} batch",
            inputs.nrows(),
            shape.batch,
            shape.seq_len
        )));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(inputs.clone());
    let out = forward_on_tape::<rand_chacha::ChaCha8Rng>(&mut tape, &p, cfg, x, shape, valid, None);
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserStates {
    pub mixed: Mat,
    pub x: Mat,
    pub y: Mat,
}

pub fn user_states(
    params: &ParameterSet,
    cfg: &EncoderConfig,
    tables: &Tables,
    batch: &SequenceBatch,
) -> Result<UserStates> {
    tables.check(batch)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let t = tables.to_tape(&mut tape);
    let s = user_states_on_tape::<rand_chacha::ChaCha8Rng>(&mut tape, &p, cfg, &t, batch, None);
    Ok(UserStates {
        mixed: tape.value(s.mixed).clone(),
        x: tape.value(s.x).clone(),
        y: tape.value(s.y).clone(),
    })
}

/// Item tables an encoder of `kind` reads, computed from the parameters.
pub fn model_tables(
    params: &ParameterSet,
    kind: EncoderKind,
    n_x: usize,
    graphs: &Graphs,
    cfg: PropagationConfig,
) -> Tables {
    let mut tape = Tape::new();
    let emb = tape.constant(params.get("emb").expect("item table").clone());
    let t = if kind.uses_propagation() {
        propagated_tables(&mut tape, emb, n_x, graphs, cfg)
    } else {
        raw_tables(&mut tape, emb, n_x)
    };
    Tables {
        global: tape.value(t.global).clone(),
        x: tape.value(t.x).clone(),
        y: tape.value(t.y).clone(),
    }
}

//! Small layers shared by the noise generator and the sequence encoders.

use std::sync::Arc;

use crate::params::Bound;
use crate::tape::{Tape, Var};

pub fn linear(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
    let w = p.get(&format!("{name}.w"));
    let b = p.get(&format!("{name}.b"));
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

/// `l2(tanh(l1(x)))`.
pub fn mlp(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
    let h = linear(tape, p, &format!("{name}.l1"), x);
    let h = tape.tanh(h);
    linear(tape, p, &format!("{name}.l2"), h)
}

pub fn layer_norm(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
    let g = p.get(&format!("{name}.g"));
    let b = p.get(&format!("{name}.b"));
    tape.layer_norm(x, g, b, 1e-5)
}

/// Gated recurrent unit weights bound under a common prefix.
pub struct Gru {
    w_i: [Var; 3],
    w_h: [Var; 3],
    b_i: [Var; 3],
    b_h: [Var; 3],
}

impl Gru {
    pub fn bind(p: &Bound, prefix: &str) -> Self {
        let get = |kind: &str| ["r", "z", "n"].map(|g| p.get(&format!("{prefix}.{kind}{g}")));
        Self {
            w_i: get("w_i"),
            w_h: get("w_h"),
            b_i: get("b_i"),
            b_h: get("b_h"),
        }
    }

    /// Input projections `x W_i + b_i` for the r, z and n gates.
    fn project_inputs(&self, tape: &mut Tape, x: Var) -> [Var; 3] {
        [0, 1, 2].map(|g| {
            let y = tape.matmul(x, self.w_i[g]);
            tape.add_row(y, self.b_i[g])
        })
    }

    /// One step from projected inputs:
    /// `r = σ(xr + h W_hr + b_hr)`, `z = σ(xz + h W_hz + b_hz)`,
    /// `n = tanh(xn + r ⊙ (h W_hn + b_hn))`, `h' = n + z ⊙ (h − n)`.
    fn step(&self, tape: &mut Tape, xp: [Var; 3], h: Var) -> Var {
        let hp: [Var; 3] = [0, 1, 2].map(|g| {
            let y = tape.matmul(h, self.w_h[g]);
            tape.add_row(y, self.b_h[g])
        });
        let r = tape.add(xp[0], hp[0]);
        let r = tape.sigmoid(r);
        let z = tape.add(xp[1], hp[1]);
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hp[2]);
        let n = tape.add(xp[2], rn);
        let n = tape.tanh(n);
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }

    /// Runs over `batch` sequences of `seq_len` rows each (row `b*seq_len+t`)
    /// from a zero state. Where `valid` is false the state is carried over
    /// unchanged. Returns per-position states in the same row layout and the
    /// final `batch × hidden` state.
    pub fn run(
        &self,
        tape: &mut Tape,
        inputs: Var,
        batch: usize,
        seq_len: usize,
        valid: &[bool],
    ) -> (Var, Var) {
        let hidden = tape.shape(self.w_h[0]).0;
        let projected = self.project_inputs(tape, inputs);
        let mut h = tape.constant(crate::tape::Mat::zeros((batch, hidden)));
        let mut steps = Vec::with_capacity(seq_len);
        for t in 0..seq_len {
            let rows: Vec<usize> = (0..batch).map(|b| b * seq_len + t).collect();
            let xp = projected.map(|p| tape.gather_rows(p, &rows));
            let next = self.step(tape, xp, h);
            let mask: Vec<f64> = rows
                .iter()
                .map(|&r| if valid[r] { 1.0 } else { 0.0 })
                .collect();
            h = if mask.iter().all(|&m| m == 1.0) {
                next
            } else if mask.iter().all(|&m| m == 0.0) {
                h
            } else {
                let keep: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
                let a = tape.mask_rows(next, Arc::new(mask));
                let b = tape.mask_rows(h, Arc::new(keep));
                tape.add(a, b)
            };
            steps.push(h);
        }
        // stacked rows are t*batch+b; reorder to b*seq_len+t
        let stacked = tape.concat_rows(&steps);
        let order: Vec<usize> = (0..batch * seq_len)
            .map(|r| (r % seq_len) * batch + r / seq_len)
            .collect();
        let states = tape.gather_rows(stacked, &order);
        (states, h)
    }
}

use crate::params::ParameterSet;
use crate::tape::Mat;

/// Rounds every entry to the nearest `f32`.
pub(crate) fn round_f32(m: &mut Mat) {
    m.mapv_inplace(|x| x as f32 as f64);
}

/// Adam without weight decay. Parameters and both moment estimates are
/// kept at `f32` precision after every step, so a checkpoint written as
/// `f32` restores the exact training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl Adam {
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update with `grads[i]` belonging to `params.tensors()[i]`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Mat]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for i in 0..grads.len() {
            let (p, m, v, g) = (&mut tensors[i], &mut ms[i], &mut vs[i], &grads[i]);
            ndarray::Zip::from(&mut *p)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            round_f32(p);
            round_f32(m);
            round_f32(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParameterSet::new();
        p.insert("w", array![[1.0, -2.0]]);
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &[array![[3.0, -0.5]]]);
        let w = p.get("w").unwrap();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = ParameterSet::new();
        p.insert("w", array![[0.5]]);
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &[array![[0.0]]]);
        assert_eq!(p.get("w").unwrap()[[0, 0]], 0.5);
    }
}

//! Multi-task optimization: batch assembly, the combined objective, Adam,
//! early stopping and checkpoints.

mod adam;
mod checkpoint;
mod fit;
mod gradcheck;
mod step;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, Manifest, RngRecord, GLOBAL_OVERRIDE,
};
pub use fit::{fit, train_epoch, EarlyStopping, EpochRecord, FitResult, TrainState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use step::{build_objective, Objective, StepInputs, StepNoise};

use crate::error::{Error, Result};
use crate::graph::PropagationConfig;
use crate::objective::LossWeights;
use crate::seqmodel::EncoderConfig;

/// Switches that remove parts of the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// No augmented views and no intra-domain contrast.
    pub no_generation: bool,
    /// Noise drawn from `N(0, I)` instead of the sequence-conditioned generator.
    pub std_normal_noise: bool,
    /// No inter-domain alignment.
    pub no_alignment: bool,
    /// Align against the unfiltered global table.
    pub no_asf: bool,
    /// Fix the annealing factor at 0.5.
    pub no_annealing: bool,
}

impl Ablation {
    /// Flag set of a variant letter B–G. `A` is the full model.
    pub fn variant(letter: char) -> Result<Self> {
        let none = Ablation::default();
        Ok(match letter.to_ascii_uppercase() {
            'A' => none,
            'B' => Ablation {
                no_generation: true,
                no_alignment: true,
                ..none
            },
            'C' => Ablation {
                no_generation: true,
                ..none
            },
            'D' => Ablation {
                std_normal_noise: true,
                ..none
            },
            'E' => Ablation {
                no_alignment: true,
                ..none
            },
            'F' => Ablation {
                no_asf: true,
                ..none
            },
            'G' => Ablation {
                no_annealing: true,
                ..none
            },
            other => {
                return Err(Error::InvalidArgument(format!("unknown variant {other:?}")));
            }
        })
    }

    /// Both contrastive objectives removed.
    pub fn all() -> Self {
        Self::variant('B').expect("B is a variant")
    }

    pub fn merge(self, other: Ablation) -> Ablation {
        Ablation {
            no_generation: self.no_generation || other.no_generation,
            std_normal_noise: self.std_normal_noise || other.std_normal_noise,
            no_alignment: self.no_alignment || other.no_alignment,
            no_asf: self.no_asf || other.no_asf,
            no_annealing: self.no_annealing || other.no_annealing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub dim: usize,
    pub max_len: usize,
    pub layers: usize,
    pub tau: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n_anneal: usize,
    pub seed: u64,
    /// Most anchors per domain in one contrastive batch.
    pub contrast_cap: usize,
    pub encoder: EncoderConfig,
    pub ablation: Ablation,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            dim: 256,
            max_len: 30,
            layers: 2,
            tau: 0.2,
            alpha: 0.1,
            batch_size: 256,
            lr: 1e-3,
            max_epochs: 100,
            patience: 5,
            lambda1: 0.5,
            lambda2: 0.5,
            n_anneal: 50,
            seed: 0,
            contrast_cap: 512,
            encoder: EncoderConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("n_anneal", self.n_anneal),
            ("contrast_cap", self.contrast_cap),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        let reals = [("tau", self.tau), ("lr", self.lr)];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        let weights = [
            ("alpha", self.alpha),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ];
        if let Some((name, _)) = weights.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be non-negative"
            )));
        }
        self.encoder.validate(self.dim)
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            layers: self.layers,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            n_anneal: self.n_anneal,
        }
    }

    /// Whether augmented views and the intra-domain term are computed.
    pub fn generation_active(&self) -> bool {
        !self.ablation.no_generation && self.lambda1 != 0.0
    }

    pub fn alignment_active(&self) -> bool {
        !self.ablation.no_alignment && self.lambda2 != 0.0
    }

    /// Annealing factor for a 0-based epoch.
    pub fn eta(&self, epoch: usize) -> f64 {
        if self.ablation.no_annealing {
            crate::objective::ETA_FLOOR
        } else {
            crate::objective::anneal_eta(epoch, self.n_anneal)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_b_is_all() {
        let b = Ablation::variant('b').unwrap();
        assert!(b.no_generation && b.no_alignment);
        assert_eq!(Ablation::all(), b);
        assert!(Ablation::variant('H').is_err());
    }

    #[test]
    fn defaults_validate() {
        assert!(HyperParams::default().validate().is_ok());
        let hp = HyperParams {
            tau: 0.0,
            ..HyperParams::default()
        };
        assert!(hp.validate().is_err());
    }

    #[test]
    fn zero_lambda_disables_terms() {
        let hp = HyperParams {
            lambda1: 0.0,
            ..HyperParams::default()
        };
        assert!(!hp.generation_active());
        assert!(hp.alignment_active());
    }

    #[test]
    fn fixed_eta_without_annealing() {
        let mut hp = HyperParams::default();
        assert_eq!(hp.eta(0), 1.0);
        hp.ablation.no_annealing = true;
        assert_eq!(hp.eta(0), 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<HyperParams>(r#"{"dimm": 3}"#).is_err());
        let hp: HyperParams = serde_json::from_str(r#"{"dim": 8}"#).unwrap();
        assert_eq!(hp.dim, 8);
        assert_eq!(hp.max_len, 30);
    }
}

//! Experiment configuration: a TOML document with one section per concern.
//!
//! ```toml
//! out_dir = "runs/food-kitchen"
//!
//! [data]
//! events = "raw/events.tsv"
//! prepared = "prepared"
//! min_interactions = 10
//! min_domain_len = 3
//! split_seed = 0
//! labels = { Food = "X", Kitchen = "Y" }
//!
//! [graph]
//! window = 1
//!
//! [train]
//! dim = 64
//! batch_size = 128
//!
//! [encoder]
//! kind = "recurrent"
//!
//! [ablation]
//! no_asf = true
//!
//! [synth]
//! n_users = 50
//! ```
//!
//! Unknown keys anywhere are errors. Missing keys take the defaults of the
//! corresponding core types.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use xdrec_core::corpus::SyntheticSpec;
use xdrec_core::{Ablation, Domain, EncoderConfig, HyperParams};

/// Environment variable naming the root for relative output paths.
pub const OUT_ROOT_ENV: &str = "XDREC_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub events: Option<PathBuf>,
    pub prepared: Option<PathBuf>,
    pub min_interactions: usize,
    pub min_domain_len: usize,
    pub split_seed: u64,
    pub labels: BTreeMap<String, Domain>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            events: None,
            prepared: None,
            min_interactions: 10,
            min_domain_len: 3,
            split_seed: 0,
            labels: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub window: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { window: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub graph: GraphSection,
    /// Every `HyperParams` field except `encoder` and `ablation`, which have
    /// their own sections.
    pub train: toml::Table,
    pub encoder: EncoderConfig,
    pub ablation: Ablation,
    pub synth: SyntheticSpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.hyperparams()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Loads `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Hyperparameters from `[train]`, `[encoder]` and `[ablation]`.
    pub fn hyperparams(&self) -> Result<HyperParams> {
        for nested in ["encoder", "ablation"] {
            if self.train.contains_key(nested) {
                bail!("[train] must not contain `{nested}`; use the [{nested}] section");
            }
        }
        let mut hp: HyperParams = self
            .train
            .clone()
            .try_into()
            .context("invalid [train] section")?;
        hp.encoder = self.encoder.clone();
        hp.ablation = self.ablation;
        Ok(hp)
    }
}

/// Resolves a relative output path against `$XDREC_OUT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg.hyperparams().unwrap(), HyperParams::default());
        assert_eq!(cfg.data.min_interactions, 10);
        assert_eq!(cfg.graph.window, 1);
    }

    #[test]
    fn sections_fill_hyperparams() {
        let cfg = ExperimentConfig::parse(
            "[train]\ndim = 16\nlr = 0.0005\n[encoder]\nkind = \"recurrent\"\n[ablation]\nno_asf = true\n",
        )
        .unwrap();
        let hp = cfg.hyperparams().unwrap();
        assert_eq!(hp.dim, 16);
        assert_eq!(hp.lr, 5e-4);
        assert_eq!(hp.encoder.kind, xdrec_core::EncoderKind::Recurrent);
        assert!(hp.ablation.no_asf);
        assert_eq!(hp.batch_size, 256);
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(ExperimentConfig::parse("[train]\ndimension = 4\n").is_err());
        assert!(ExperimentConfig::parse("[graph]\nwindow = 1\nweighted = true\n").is_err());
        assert!(ExperimentConfig::parse("[colour]\n").is_err());
        assert!(ExperimentConfig::parse("[train.encoder]\nkind = \"recurrent\"\n").is_err());
    }

    #[test]
    fn labels_map_to_domains() {
        let cfg = ExperimentConfig::parse("[data]\nlabels = { Food = \"X\", Kitchen = \"Y\" }\n")
            .unwrap();
        assert_eq!(cfg.data.labels["Kitchen"], Domain::Y);
    }
}

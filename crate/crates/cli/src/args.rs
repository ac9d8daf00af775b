use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xdrec_core::{Ablation, EncoderKind, HyperParams, Partition};

#[derive(Debug, Parser)]
#[command(
    name = "xdrec",
    version,
    about = "Cross-domain sequential recommendation experiments"
)]
pub struct Cli {
    /// Experiment config (TOML). Flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-structure event file.
    Synth(SynthArgs),
    /// Filter events, split them and build the co-occurrence graphs.
    Prepare(PrepareArgs),
    /// Train one model per seed and evaluate the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation or test instances.
    Eval(EvalArgs),
    /// Rescale a group of singular values of the global item table.
    Probe(ProbeArgs),
    /// Train an ablation variant (B to G).
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives `events.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items_per_domain: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub transfer_strength: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Tab-separated `user item domain timestamp` file.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Output directory for the prepared corpus and graphs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_interactions: Option<usize>,
    #[arg(long)]
    pub min_domain_len: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Co-occurrence window of the graphs.
    #[arg(long)]
    pub window: Option<usize>,
    /// Domain label mapping such as `Food=X`; repeatable.
    #[arg(long = "label", value_name = "NAME=X|Y")]
    pub labels: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationFlag {
    /// Variant B: no generation and no alignment.
    All,
    NoGeneration,
    StdNormalNoise,
    NoAlignment,
    NoAsf,
    NoAnnealing,
}

impl AblationFlag {
    pub fn ablation(self) -> Ablation {
        let none = Ablation::default();
        match self {
            AblationFlag::All => Ablation::all(),
            AblationFlag::NoGeneration => Ablation {
                no_generation: true,
                ..none
            },
            AblationFlag::StdNormalNoise => Ablation {
                std_normal_noise: true,
                ..none
            },
            AblationFlag::NoAlignment => Ablation {
                no_alignment: true,
                ..none
            },
            AblationFlag::NoAsf => Ablation {
                no_asf: true,
                ..none
            },
            AblationFlag::NoAnnealing => Ablation {
                no_annealing: true,
                ..none
            },
        }
    }
}

/// Hyperparameter overrides shared by `train` and `ablate`.
#[derive(Debug, Default, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Propagation layers.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub n_anneal: Option<usize>,
    #[arg(long)]
    pub contrast_cap: Option<usize>,
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Ablation switches, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ablate: Vec<AblationFlag>,
}

impl HyperArgs {
    pub fn apply(&self, hp: &mut HyperParams) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    hp.$field = v;
                }
            )*};
        }
        set!(
            dim,
            max_len,
            layers,
            tau,
            alpha,
            batch_size,
            lr,
            max_epochs,
            patience,
            lambda1,
            lambda2,
            n_anneal,
            contrast_cap
        );
        if let Some(kind) = self.encoder {
            hp.encoder.kind = kind;
        }
        if let Some(p) = self.dropout {
            hp.encoder.dropout = p;
        }
        for flag in &self.ablate {
            hp.ablation = hp.ablation.merge(flag.ablation());
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared corpus directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Several seeds, comma separated; also writes median reports.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// No per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Variant letter, B to G.
    #[arg(long)]
    pub variant: char,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub partition: Partition,
    /// Also write `metrics_<partition>.{json,csv}` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// 1-based inclusive range of singular values, e.g. `1-5`.
    #[arg(long)]
    pub group: String,
    #[arg(long)]
    pub coefficient: f64,
    /// Receives `checkpoint/` and `spectrum.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

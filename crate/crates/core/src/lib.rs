//! Cross-domain sequential recommendation with partially aligned item
//! representations.
//!
//! Two item domains share users. Item embeddings are propagated over
//! co-occurrence graphs, perturbed by sequence-conditioned noise for
//! intra-domain contrast, and aligned across domains only after a learned
//! rank-1 spectrum filter removes one direction of the global table. A
//! causal encoder reads mixed and single-domain views of each sequence and
//! is trained on next-item prediction in both domains.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod nn;
pub mod objective;
pub mod params;
pub mod seqmodel;
pub mod spectrum;
pub mod tape;
pub mod trainer;

pub use corpus::{
    CrossDomainSequence, DatasetSplit, Domain, DomainVocab, EvalInstance, InteractionEvent,
    ItemRef, Partition,
};
pub use error::{Error, Result};
pub use evaluator::{evaluate, MetricsReport, ModelView};
pub use graph::{Graphs, RawGraphs};
pub use params::ParameterSet;
pub use seqmodel::{EncoderConfig, EncoderKind};
pub use tape::{Mat, Tape, Var};
pub use trainer::{fit, Ablation, Checkpoint, HyperParams};

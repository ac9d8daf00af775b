//! Fixtures shared by the criterion benches.

use xdrec_core::corpus::{
    build_corpus, generate_synthetic, make_splits, DatasetSplit, SyntheticSpec,
};
use xdrec_core::{Domain, Graphs, RawGraphs};

pub struct Fixture {
    pub split: DatasetSplit,
    pub graphs: Graphs,
    pub n_x: usize,
    pub n_y: usize,
}

/// The default planted corpus, split with seed 0 and window-1 graphs.
pub fn synthetic(n_users: usize) -> Fixture {
    let spec = SyntheticSpec {
        n_users,
        ..SyntheticSpec::default()
    };
    let events = generate_synthetic(&spec).expect("valid spec");
    let corpus = build_corpus(&events, 1, 1).expect("non-empty corpus");
    let split = make_splits(&corpus.sequences, 0);
    let (n_x, n_y) = (corpus.vocab.size(Domain::X), corpus.vocab.size(Domain::Y));
    let graphs = RawGraphs::build(&split.train, n_x, n_y, 1)
        .expect("graphs")
        .normalized();
    Fixture {
        split,
        graphs,
        n_x,
        n_y,
    }
}

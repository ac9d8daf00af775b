//! Interaction ingestion, preprocessing and leave-one-out splits.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_prepared, write_prepared, Prepared};
pub use synth::{generate_synthetic, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::X, Domain::Y];

    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::X => "X",
            Domain::Y => "Y",
        }
    }

    pub fn lower(self) -> &'static str {
        match self {
            Domain::X => "x",
            Domain::Y => "y",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "X" => Ok(Domain::X),
            "Y" => Ok(Domain::Y),
            other => Err(format!("unknown domain tag {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user: String,
    pub item: String,
    pub domain: Domain,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub events: Vec<InteractionEvent>,
    pub rejected: Vec<Rejection>,
}

/// Maps dataset-specific domain labels (e.g. `Food`, `Kitchen`) onto X/Y.
/// The literal labels `X` and `Y` are always accepted.
#[derive(Clone, Debug, Default)]
pub struct DomainLabels(HashMap<String, Domain>);

impl DomainLabels {
    pub fn new(map: HashMap<String, Domain>) -> Self {
        Self(map)
    }

    pub fn resolve(&self, label: &str) -> Option<Domain> {
        self.0.get(label).copied().or_else(|| label.parse().ok())
    }
}

/// Parses `user<TAB>item<TAB>domain<TAB>timestamp` lines.
///
/// Blank lines are skipped. Lines with the wrong field count, a bad
/// timestamp or an unknown domain are rejected with their line number.
/// Events come back sorted by `(user, timestamp)`; ties keep input order.
pub fn ingest_events<R: BufRead>(source: R, labels: &DomainLabels) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: format!("unreadable source: {e}"),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let reject = |reason: String| Rejection {
            line: line_no,
            reason,
        };
        if fields.len() != 4 {
            report
                .rejected
                .push(reject(format!("expected 4 fields, found {}", fields.len())));
            continue;
        }
        let Some(domain) = labels.resolve(fields[2]) else {
            report
                .rejected
                .push(reject(format!("unknown domain tag {:?}", fields[2])));
            continue;
        };
        let timestamp = match fields[3].trim().parse::<u64>() {
            Ok(t) => t,
            Err(e) => {
                report
                    .rejected
                    .push(reject(format!("bad timestamp {:?}: {e}", fields[3])));
                continue;
            }
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            report.rejected.push(reject("empty user or item".into()));
            continue;
        }
        report.events.push(InteractionEvent {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            domain,
            timestamp,
        });
    }
    sort_events(&mut report.events);
    Ok(report)
}

pub fn sort_events(events: &mut [InteractionEvent]) {
    events.sort_by(|a, b| a.user.cmp(&b.user).then(a.timestamp.cmp(&b.timestamp)));
}

pub fn write_events<W: std::io::Write>(
    mut out: W,
    events: &[InteractionEvent],
) -> std::io::Result<()> {
    for e in events {
        writeln!(out, "{}\t{}\t{}\t{}", e.user, e.item, e.domain, e.timestamp)?;
    }
    Ok(())
}

/// Per-domain dense item indices. X items occupy global indices
/// `[0, |X|)`, Y items `[|X|, |X|+|Y|)`. Padding is represented as `None`
/// wherever a slot may be empty and never receives an index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainVocab {
    items: [Vec<String>; 2],
    index: [HashMap<String, usize>; 2],
}

impl DomainVocab {
    pub fn new(x_items: Vec<String>, y_items: Vec<String>) -> Self {
        let index_of = |items: &[String]| {
            items
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i))
                .collect::<HashMap<_, _>>()
        };
        let index = [index_of(&x_items), index_of(&y_items)];
        Self {
            items: [x_items, y_items],
            index,
        }
    }

    fn slot(domain: Domain) -> usize {
        match domain {
            Domain::X => 0,
            Domain::Y => 1,
        }
    }

    pub fn size(&self, domain: Domain) -> usize {
        self.items[Self::slot(domain)].len()
    }

    pub fn n_total(&self) -> usize {
        self.size(Domain::X) + self.size(Domain::Y)
    }

    pub fn offset(&self, domain: Domain) -> usize {
        match domain {
            Domain::X => 0,
            Domain::Y => self.size(Domain::X),
        }
    }

    pub fn lookup(&self, domain: Domain, item: &str) -> Option<usize> {
        self.index[Self::slot(domain)].get(item).copied()
    }

    pub fn item_id(&self, domain: Domain, local: usize) -> &str {
        &self.items[Self::slot(domain)][local]
    }

    pub fn items(&self, domain: Domain) -> &[String] {
        &self.items[Self::slot(domain)]
    }

    pub fn item_ref(&self, domain: Domain, local: usize) -> ItemRef {
        ItemRef {
            domain,
            local,
            global: self.offset(domain) + local,
        }
    }

    pub fn from_global(&self, global: usize) -> Option<ItemRef> {
        let nx = self.size(Domain::X);
        if global < nx {
            Some(self.item_ref(Domain::X, global))
        } else if global < self.n_total() {
            Some(self.item_ref(Domain::Y, global - nx))
        } else {
            None
        }
    }
}

/// An item occurrence: its domain, index within the domain, and index in
/// the concatenated (global) vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ItemRef {
    pub domain: Domain,
    pub local: usize,
    pub global: usize,
}

/// A user's chronologically merged interactions over both domains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossDomainSequence {
    pub user: String,
    pub items: Vec<ItemRef>,
}

impl CrossDomainSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn domain_len(&self, domain: Domain) -> usize {
        self.items.iter().filter(|i| i.domain == domain).count()
    }

    /// Single-domain view: local indices, `None` at foreign positions.
    pub fn view(&self, domain: Domain) -> Vec<Option<usize>> {
        self.items
            .iter()
            .map(|i| (i.domain == domain).then_some(i.local))
            .collect()
    }
}

/// A fixed-length window; leading slots are padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedSequence {
    pub slots: Vec<Option<ItemRef>>,
}

impl PaddedSequence {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn mixed(&self) -> Vec<Option<usize>> {
        self.slots.iter().map(|s| s.map(|i| i.global)).collect()
    }

    pub fn view(&self, domain: Domain) -> Vec<Option<usize>> {
        self.slots
            .iter()
            .map(|s| s.filter(|i| i.domain == domain).map(|i| i.local))
            .collect()
    }
}

/// Keeps the most recent `n` items and left-pads to exactly `n` slots.
pub fn truncate_pad(items: &[ItemRef], n: usize) -> PaddedSequence {
    assert!(n >= 1, "window length must be positive");
    let keep = &items[items.len().saturating_sub(n)..];
    let mut slots = vec![None; n - keep.len()];
    slots.extend(keep.iter().copied().map(Some));
    PaddedSequence { slots }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input_events: usize,
    pub input_users: usize,
    pub common_users: usize,
    pub removed_items: usize,
    pub removed_users_min_interactions: usize,
    pub removed_users_domain_len: usize,
    pub retained_users: usize,
    pub retained_events: usize,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: DomainVocab,
    pub sequences: Vec<CrossDomainSequence>,
    pub stats: FilterStats,
}

/// Common-user extraction and frequency filtering, in this order:
/// users active in both domains; items with fewer than `min_interactions`
/// interactions; users with fewer than `min_interactions` remaining
/// interactions; users with fewer than `min_domain_len` items in either
/// domain. One pass each, no fixpoint iteration.
pub fn build_corpus(
    events: &[InteractionEvent],
    min_interactions: usize,
    min_domain_len: usize,
) -> Result<Corpus> {
    let mut events = events.to_vec();
    sort_events(&mut events);
    let mut stats = FilterStats {
        input_events: events.len(),
        ..Default::default()
    };

    let mut user_domains: BTreeMap<&str, [bool; 2]> = BTreeMap::new();
    for e in &events {
        let flags = user_domains.entry(e.user.as_str()).or_default();
        flags[DomainVocab::slot(e.domain)] = true;
    }
    stats.input_users = user_domains.len();
    let common: BTreeSet<&str> = user_domains
        .iter()
        .filter(|(_, f)| f[0] && f[1])
        .map(|(u, _)| *u)
        .collect();
    stats.common_users = common.len();
    let events: Vec<&InteractionEvent> = events
        .iter()
        .filter(|e| common.contains(e.user.as_str()))
        .collect();

    let mut item_counts: HashMap<(Domain, &str), usize> = HashMap::new();
    for e in &events {
        *item_counts.entry((e.domain, e.item.as_str())).or_default() += 1;
    }
    stats.removed_items = item_counts
        .values()
        .filter(|&&c| c < min_interactions)
        .count();
    let events: Vec<&InteractionEvent> = events
        .into_iter()
        .filter(|e| item_counts[&(e.domain, e.item.as_str())] >= min_interactions)
        .collect();

    let mut user_counts: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
    for e in &events {
        user_counts.entry(e.user.as_str()).or_default()[DomainVocab::slot(e.domain)] += 1;
    }
    let mut keep: BTreeSet<&str> = BTreeSet::new();
    for (user, counts) in &user_counts {
        if counts[0] + counts[1] < min_interactions {
            stats.removed_users_min_interactions += 1;
        } else if counts[0] < min_domain_len || counts[1] < min_domain_len {
            stats.removed_users_domain_len += 1;
        } else {
            keep.insert(user);
        }
    }
    let events: Vec<&InteractionEvent> = events
        .into_iter()
        .filter(|e| keep.contains(e.user.as_str()))
        .collect();

    if events.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{} input events, {} users ({} common), {} items below {min_interactions} interactions, \
             {} users below {min_interactions} interactions, {} users below {min_domain_len} items per domain",
            stats.input_events,
            stats.input_users,
            stats.common_users,
            stats.removed_items,
            stats.removed_users_min_interactions,
            stats.removed_users_domain_len,
        )));
    }

    let mut items: [BTreeSet<&str>; 2] = Default::default();
    for e in &events {
        items[DomainVocab::slot(e.domain)].insert(e.item.as_str());
    }
    let [xs, ys] = items;
    let vocab = DomainVocab::new(
        xs.into_iter().map(String::from).collect(),
        ys.into_iter().map(String::from).collect(),
    );

    let mut sequences: Vec<CrossDomainSequence> = Vec::with_capacity(keep.len());
    for e in &events {
        let local = vocab.lookup(e.domain, &e.item).expect("item in vocab");
        let item = vocab.item_ref(e.domain, local);
        match sequences.last_mut() {
            Some(s) if s.user == e.user => s.items.push(item),
            _ => sequences.push(CrossDomainSequence {
                user: e.user.clone(),
                items: vec![item],
            }),
        }
    }
    stats.retained_users = sequences.len();
    stats.retained_events = events.len();
    Ok(Corpus {
        vocab,
        sequences,
        stats,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

/// One held-out next-item prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalInstance {
    pub user: String,
    pub domain: Domain,
    /// Full mixed sequence strictly before the target.
    pub prefix: Vec<ItemRef>,
    pub target: ItemRef,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<CrossDomainSequence>,
    pub eval: Vec<EvalInstance>,
}

impl DatasetSplit {
    pub fn instances(&self, partition: Partition) -> Vec<EvalInstance> {
        self.eval
            .iter()
            .filter(|i| i.partition == partition)
            .cloned()
            .collect()
    }
}

fn last_domain_position(items: &[ItemRef], domain: Domain) -> Option<usize> {
    items.iter().rposition(|i| i.domain == domain)
}

/// Leave-one-out: each user's final item in each domain becomes an eval
/// instance (prefix = everything before it in mixed order). Instances are
/// divided 50/50 between validation and test per domain by a seeded
/// shuffle; the remaining interactions form the training sequences.
pub fn make_splits(sequences: &[CrossDomainSequence], seed: u64) -> DatasetSplit {
    let mut per_domain: [Vec<EvalInstance>; 2] = Default::default();
    let mut train = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let mut held = Vec::new();
        for domain in Domain::BOTH {
            if let Some(p) = last_domain_position(&seq.items, domain) {
                if p == 0 {
                    continue;
                }
                held.push(p);
                per_domain[DomainVocab::slot(domain)].push(EvalInstance {
                    user: seq.user.clone(),
                    domain,
                    prefix: seq.items[..p].to_vec(),
                    target: seq.items[p],
                    partition: Partition::Val,
                });
            }
        }
        let items: Vec<ItemRef> = seq
            .items
            .iter()
            .enumerate()
            .filter(|(i, _)| !held.contains(i))
            .map(|(_, it)| *it)
            .collect();
        train.push(CrossDomainSequence {
            user: seq.user.clone(),
            items,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = Vec::new();
    for mut instances in per_domain {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut rng);
        let half = instances.len() / 2;
        for (rank, &i) in order.iter().enumerate() {
            instances[i].partition = if rank < half {
                Partition::Val
            } else {
                Partition::Test
            };
        }
        eval.extend(instances);
    }
    DatasetSplit { train, eval }
}

/// The final item of each training sequence (of at least two items) as an
/// instance tagged [`Partition::Train`], with everything before it as the
/// prefix. These are the targets the model is trained on at the same
/// readout slot evaluation uses.
pub fn training_targets(train: &[CrossDomainSequence]) -> Vec<EvalInstance> {
    train
        .iter()
        .filter(|seq| seq.len() >= 2)
        .map(|seq| {
            let p = seq.len() - 1;
            EvalInstance {
                user: seq.user.clone(),
                domain: seq.items[p].domain,
                prefix: seq.items[..p].to_vec(),
                target: seq.items[p],
                partition: Partition::Train,
            }
        })
        .collect()
}

/// Dataset summary in the layout of the usual statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub items_x: usize,
    pub items_y: usize,
    pub users: usize,
    pub train_sequences: usize,
    pub val_x: usize,
    pub test_x: usize,
    pub val_y: usize,
    pub test_y: usize,
    pub avg_length: f64,
}

impl DatasetStats {
    pub fn compute(corpus: &Corpus, split: &DatasetSplit) -> Self {
        let count = |d: Domain, p: Partition| {
            split
                .eval
                .iter()
                .filter(|i| i.domain == d && i.partition == p)
                .count()
        };
        let total: usize = corpus.sequences.iter().map(|s| s.len()).sum();
        DatasetStats {
            items_x: corpus.vocab.size(Domain::X),
            items_y: corpus.vocab.size(Domain::Y),
            users: corpus.sequences.len(),
            train_sequences: split.train.len(),
            val_x: count(Domain::X, Partition::Val),
            test_x: count(Domain::X, Partition::Test),
            val_y: count(Domain::Y, Partition::Val),
            test_y: count(Domain::Y, Partition::Test),
            avg_length: total as f64 / corpus.sequences.len().max(1) as f64,
        }
    }

    /// `key=value` lines, one statistic per line.
    pub fn to_block(&self) -> String {
        format!(
            "items_x={}\nitems_y={}\nusers={}\ntrain_sequences={}\nval_x={}\ntest_x={}\nval_y={}\ntest_y={}\navg_length={:.2}\n",
            self.items_x,
            self.items_y,
            self.users,
            self.train_sequences,
            self.val_x,
            self.test_x,
            self.val_y,
            self.test_y,
            self.avg_length
        )
    }
}

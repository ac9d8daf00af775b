//! Leave-one-out ranking against the full item set of the target's domain.

use ndarray::{s, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{truncate_pad, Domain, EvalInstance, Partition};
use crate::error::{Error, Result};
use crate::graph::Graphs;
use crate::params::ParameterSet;
use crate::seqmodel::{model_tables, user_states, SequenceBatch};
use crate::tape::Mat;
use crate::trainer::HyperParams;

const EVAL_BATCH: usize = 256;

/// `1 + #{j : s_j > s_target}`; ties rank in the target's favour.
pub fn rank_from_scores(scores: ArrayView1<f64>, target: usize) -> usize {
    let t = scores[target];
    1 + scores.iter().filter(|&&s| s > t).count()
}

/// Rank of `target` under scores `(h_dom + h) W`.
pub fn rank_target(
    h_dom: ArrayView1<f64>,
    h: ArrayView1<f64>,
    head: &Mat,
    target: usize,
) -> Result<usize> {
    if target >= head.ncols() {
        return Err(Error::Shape(format!(
            "target {target} outside a head of {}",
            head.ncols()
        )));
    }
    if h_dom.len() != head.nrows() || h.len() != head.nrows() {
        return Err(Error::Shape("state width does not match the head".into()));
    }
    let scores = (&h_dom + &h).dot(head);
    Ok(rank_from_scores(scores.view(), target))
}

pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn recall_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub mrr: f64,
    pub ndcg10: f64,
    pub ndcg20: f64,
    pub recall10: f64,
    pub recall20: f64,
}

pub fn instance_metrics(rank: usize) -> InstanceMetrics {
    assert!(rank >= 1, "ranks start at 1");
    InstanceMetrics {
        mrr: 1.0 / rank as f64,
        ndcg10: ndcg_at(rank, 10),
        ndcg20: ndcg_at(rank, 20),
        recall10: recall_at(rank, 10),
        recall20: recall_at(rank, 20),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub mrr: f64,
    pub ndcg10: f64,
    pub ndcg20: f64,
    pub recall10: f64,
    pub recall20: f64,
    pub n_instances: usize,
}

impl DomainMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Option<Self> {
        if ranks.is_empty() {
            return None;
        }
        let mut sum = InstanceMetrics::default();
        for &r in ranks {
            let m = instance_metrics(r);
            sum.mrr += m.mrr;
            sum.ndcg10 += m.ndcg10;
            sum.ndcg20 += m.ndcg20;
            sum.recall10 += m.recall10;
            sum.recall20 += m.recall20;
        }
        let n = ranks.len() as f64;
        Some(Self {
            mrr: sum.mrr / n,
            ndcg10: sum.ndcg10 / n,
            ndcg20: sum.ndcg20 / n,
            recall10: sum.recall10 / n,
            recall20: sum.recall20 / n,
            n_instances: ranks.len(),
        })
    }

    pub fn values(&self) -> [(&'static str, f64); 5] {
        [
            ("mrr", self.mrr),
            ("ndcg10", self.ndcg10),
            ("ndcg20", self.ndcg20),
            ("recall10", self.recall10),
            ("recall20", self.recall20),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub partition: Partition,
    pub x: Option<DomainMetrics>,
    pub y: Option<DomainMetrics>,
}

impl MetricsReport {
    pub fn from_ranks(partition: Partition, ranks: &[(Domain, usize)]) -> Self {
        let of = |d: Domain| -> Vec<usize> {
            ranks
                .iter()
                .filter(|(dd, _)| *dd == d)
                .map(|&(_, r)| r)
                .collect()
        };
        Self {
            partition,
            x: DomainMetrics::from_ranks(&of(Domain::X)),
            y: DomainMetrics::from_ranks(&of(Domain::Y)),
        }
    }

    pub fn domain(&self, domain: Domain) -> Option<&DomainMetrics> {
        match domain {
            Domain::X => self.x.as_ref(),
            Domain::Y => self.y.as_ref(),
        }
    }

    /// Unweighted mean over the domains that have instances.
    pub fn mean_mrr(&self) -> f64 {
        let present: Vec<f64> = [&self.x, &self.y]
            .iter()
            .filter_map(|m| m.map(|m| m.mrr))
            .collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub const CSV_HEADER: &'static str = "partition,domain,metric,value";

    /// One `partition,domain,metric,value` line per metric, with header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for domain in Domain::BOTH {
            if let Some(m) = self.domain(domain) {
                for (name, v) in m.values() {
                    out.push_str(&format!(
                        "{},{},{name},{v}\n",
                        self.partition.as_str(),
                        domain
                    ));
                }
                out.push_str(&format!(
                    "{},{},n_instances,{}\n",
                    self.partition.as_str(),
                    domain,
                    m.n_instances
                ));
            }
        }
        out
    }
}

/// A parameter snapshot with what is needed to run it.
#[derive(Clone, Copy, Debug)]
pub struct ModelView<'a> {
    pub params: &'a ParameterSet,
    pub hp: &'a HyperParams,
    pub n_x: usize,
    /// Replaces the mixed-view item table when set.
    pub global_override: Option<&'a Mat>,
}

/// Rank of each instance's target, in input order.
pub fn instance_ranks(
    view: &ModelView,
    graphs: &Graphs,
    instances: &[EvalInstance],
) -> Result<Vec<usize>> {
    let hp = view.hp;
    let mut tables = model_tables(
        view.params,
        hp.encoder.kind,
        view.n_x,
        graphs,
        hp.propagation(),
    );
    if let Some(g) = view.global_override {
        if g.dim() != tables.global.dim() {
            return Err(Error::Shape(format!(
                "override table {:?} vs {:?}",
                g.dim(),
                tables.global.dim()
            )));
        }
        tables.global = g.clone();
    }
    let n = hp.max_len;
    let mut ranks = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(EVAL_BATCH) {
        let windows = chunk.iter().map(|i| truncate_pad(&i.prefix, n)).collect();
        let batch = SequenceBatch::new(windows)?;
        let states = user_states(view.params, &hp.encoder, &tables, &batch)?;
        for (b, inst) in chunk.iter().enumerate() {
            let row = b * n + n - 1;
            let head = view
                .params
                .get(&format!("head.{}", inst.domain.lower()))
                .ok_or_else(|| Error::Checkpoint("missing prediction head".into()))?;
            let h_dom = match inst.domain {
                Domain::X => states.x.slice(s![row, ..]),
                Domain::Y => states.y.slice(s![row, ..]),
            };
            ranks.push(rank_target(
                h_dom,
                states.mixed.slice(s![row, ..]),
                head,
                inst.target.local,
            )?);
        }
    }
    Ok(ranks)
}

/// Metrics over the instances tagged `partition`.
pub fn evaluate(
    view: &ModelView,
    graphs: &Graphs,
    instances: &[EvalInstance],
    partition: Partition,
) -> Result<MetricsReport> {
    let chosen: Vec<EvalInstance> = instances
        .iter()
        .filter(|i| i.partition == partition)
        .cloned()
        .collect();
    if chosen.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no {} instances to evaluate",
            partition.as_str()
        )));
    }
    let ranks = instance_ranks(view, graphs, &chosen)?;
    let tagged: Vec<(Domain, usize)> = chosen.iter().map(|i| i.domain).zip(ranks).collect();
    Ok(MetricsReport::from_ranks(partition, &tagged))
}

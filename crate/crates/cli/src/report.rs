//! Median-of-seeds summaries.

use xdrec_core::evaluator::DomainMetrics;
use xdrec_core::{Domain, MetricsReport};

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

fn median_domain(reports: &[MetricsReport], domain: Domain) -> Option<DomainMetrics> {
    let per: Vec<&DomainMetrics> = reports.iter().filter_map(|r| r.domain(domain)).collect();
    if per.len() != reports.len() {
        return None;
    }
    let of = |f: fn(&DomainMetrics) -> f64| median(&per.iter().map(|m| f(m)).collect::<Vec<_>>());
    Some(DomainMetrics {
        mrr: of(|m| m.mrr)?,
        ndcg10: of(|m| m.ndcg10)?,
        ndcg20: of(|m| m.ndcg20)?,
        recall10: of(|m| m.recall10)?,
        recall20: of(|m| m.recall20)?,
        n_instances: per[0].n_instances,
    })
}

/// Metric-wise median across seeds. Each metric is taken separately, so
/// the result need not equal any single seed's report.
pub fn median_report(reports: &[MetricsReport]) -> Option<MetricsReport> {
    let first = reports.first()?;
    Some(MetricsReport {
        partition: first.partition,
        x: median_domain(reports, Domain::X),
        y: median_domain(reports, Domain::Y),
    })
}

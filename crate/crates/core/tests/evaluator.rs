mod common;

use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdrec_core::evaluator::{
    instance_metrics, instance_ranks, rank_from_scores, rank_target, DomainMetrics,
};
use xdrec_core::params::init_params;
use xdrec_core::{evaluate, Domain, HyperParams, MetricsReport, ModelView, Partition};

/// Position of the target after a stable descending sort that puts the
/// target first among equal scores.
fn sorted_rank(scores: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| (b == target).cmp(&(a == target)))
    });
    order.iter().position(|&i| i == target).unwrap() + 1
}

#[test]
fn ranks_match_a_sorting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        // coarse values so ties are common
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..8) as f64 * 0.25)
            .collect();
        let target = rng.random_range(0..n);
        assert_eq!(
            rank_from_scores(Array1::from(scores.clone()).view(), target),
            sorted_rank(&scores, target)
        );
    }
}

#[test]
fn rank_target_scores_the_summed_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let head = common::gaussian(&mut rng, 4, 9);
    let a = common::gaussian_vec(&mut rng, 4);
    let b = common::gaussian_vec(&mut rng, 4);
    let sum = &a + &b;
    let scores: Vec<f64> = (0..9)
        .map(|j| (0..4).map(|i| sum[i] * head[[i, j]]).sum())
        .collect();
    for t in 0..9 {
        assert_eq!(
            rank_target(a.view(), b.view(), &head, t).unwrap(),
            sorted_rank(&scores, t)
        );
    }
}

#[test]
fn metric_closed_forms() {
    let m = instance_metrics(1);
    assert_eq!((m.mrr, m.ndcg10, m.recall10), (1.0, 1.0, 1.0));
    let m = instance_metrics(4);
    assert!((m.mrr - 0.25).abs() < 1e-12);
    assert!((m.ndcg10 - 1.0 / 5f64.log2()).abs() < 1e-12);
}

#[test]
fn aggregation_matches_a_flat_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ranks: Vec<(Domain, usize)> = (0..50)
        .map(|i| {
            (
                if i % 3 == 0 { Domain::Y } else { Domain::X },
                rng.random_range(1..40),
            )
        })
        .collect();
    let report = MetricsReport::from_ranks(Partition::Test, &ranks);
    for domain in Domain::BOTH {
        let mine: Vec<usize> = ranks
            .iter()
            .filter(|r| r.0 == domain)
            .map(|r| r.1)
            .collect();
        let n = mine.len() as f64;
        let mrr = mine.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let r20 = mine.iter().filter(|&&r| r <= 20).count() as f64 / n;
        let nd10 = mine
            .iter()
            .map(|&r| {
                if r <= 10 {
                    1.0 / ((r + 1) as f64).log2()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / n;
        let m = report.domain(domain).unwrap();
        assert!((m.mrr - mrr).abs() < 1e-12);
        assert!((m.recall20 - r20).abs() < 1e-12);
        assert!((m.ndcg10 - nd10).abs() < 1e-12);
        assert_eq!(m.n_instances, mine.len());
    }
}

#[test]
fn duplicated_instances_leave_averages_unchanged() {
    let ranks = [3, 1, 7, 22];
    let once = DomainMetrics::from_ranks(&ranks).unwrap();
    let doubled: Vec<usize> = ranks.iter().chain(ranks.iter()).copied().collect();
    let twice = DomainMetrics::from_ranks(&doubled).unwrap();
    assert!((once.mrr - twice.mrr).abs() < 1e-15);
    assert!((once.ndcg20 - twice.ndcg20).abs() < 1e-15);
}

#[test]
fn random_model_ranks_near_chance() {
    let c = common::small_corpus(40, 60, 3);
    let hp = HyperParams {
        dim: 8,
        max_len: 10,
        ..HyperParams::default()
    };
    let params = init_params(&hp, c.n_x, c.n_y, 0);
    let view = ModelView {
        params: &params,
        hp: &hp,
        n_x: c.n_x,
        global_override: None,
    };
    let report = evaluate(&view, &c.graphs, &c.split.eval, Partition::Test).unwrap();
    for d in Domain::BOTH {
        let m = report.domain(d).unwrap();
        let n = if d == Domain::X { c.n_x } else { c.n_y } as f64;
        let chance = (1..=n as usize).map(|r| 1.0 / r as f64).sum::<f64>() / n;
        assert!(m.mrr < 6.0 * chance, "{d}: {} vs chance {chance}", m.mrr);
    }
}

#[test]
fn instance_ranks_follow_input_order() {
    let c = common::small_corpus(20, 40, 4);
    let hp = HyperParams {
        dim: 8,
        max_len: 10,
        ..HyperParams::default()
    };
    let params = init_params(&hp, c.n_x, c.n_y, 1);
    let view = ModelView {
        params: &params,
        hp: &hp,
        n_x: c.n_x,
        global_override: None,
    };
    let forward = instance_ranks(&view, &c.graphs, &c.split.eval).unwrap();
    let mut reversed_in = c.split.eval.clone();
    reversed_in.reverse();
    let mut backward = instance_ranks(&view, &c.graphs, &reversed_in).unwrap();
    backward.reverse();
    assert_eq!(forward, backward);
}

#[test]
fn empty_partition_is_an_error() {
    let c = common::small_corpus(10, 40, 5);
    let hp = HyperParams {
        dim: 8,
        max_len: 10,
        ..HyperParams::default()
    };
    let params = init_params(&hp, c.n_x, c.n_y, 1);
    let view = ModelView {
        params: &params,
        hp: &hp,
        n_x: c.n_x,
        global_override: None,
    };
    assert!(evaluate(&view, &c.graphs, &c.split.eval, Partition::Train).is_err());
}

fn scores_and_target() -> impl Strategy<Value = (Vec<f64>, usize)> {
    // quarter-step grid: ties are frequent and shifts stay exact
    prop::collection::vec((-20i32..20).prop_map(|k| k as f64 * 0.25), 1..40).prop_flat_map(|s| {
        let n = s.len();
        (Just(s), 0..n)
    })
}

proptest! {
    #[test]
    fn constant_shift_keeps_rank((scores, t) in scores_and_target(), c in -400i32..400) {
        let a = rank_from_scores(Array1::from(scores.clone()).view(), t);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c as f64 * 0.5).collect();
        prop_assert_eq!(a, rank_from_scores(Array1::from(shifted).view(), t));
    }

    #[test]
    fn raising_the_target_never_worsens_rank((scores, t) in scores_and_target(), bump in 0.0f64..3.0) {
        let a = rank_from_scores(Array1::from(scores.clone()).view(), t);
        let mut raised = scores;
        raised[t] += bump;
        prop_assert!(rank_from_scores(Array1::from(raised).view(), t) <= a);
    }

    #[test]
    fn report_invariants(ranks in prop::collection::vec(1usize..500, 1..60)) {
        let m = DomainMetrics::from_ranks(&ranks).unwrap();
        for (_, v) in m.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.recall10 <= m.recall20);
        prop_assert!(m.ndcg10 <= m.ndcg20);
        prop_assert!(m.mrr >= 0.1 * m.recall10);
        prop_assert!(m.ndcg10 <= m.recall10);
    }
}

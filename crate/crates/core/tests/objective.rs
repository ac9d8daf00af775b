mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdrec_core::augment::intra_infonce;
use xdrec_core::objective::{
    anneal_eta, cross_domain_loss, single_domain_loss, total_loss, LossParts,
};
use xdrec_core::{Domain, Mat};

fn nll(scores: &[f64], target: usize) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    lse - scores[target]
}

fn scores(h: &[f64], head: &Mat) -> Vec<f64> {
    (0..head.ncols())
        .map(|j| h.iter().enumerate().map(|(i, v)| v * head[[i, j]]).sum())
        .collect()
}

#[test]
fn annealing_schedule_on_the_search_grid() {
    for n in [25, 50, 75, 100, 200] {
        assert_eq!(anneal_eta(0, n), 1.0);
        assert_eq!(anneal_eta(n, n), 0.5);
        for step in 1..n {
            let expected = 1.0 - 0.5 * step as f64 / n as f64;
            assert!((anneal_eta(step, n) - expected).abs() < 1e-15);
        }
        for step in n..n + 50 {
            assert_eq!(anneal_eta(step, n), 0.5);
        }
    }
}

#[test]
fn losses_match_direct_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (rows, d, nx, ny) = (9, 3, 5, 4);
    let h = common::gaussian(&mut rng, rows, d);
    let hx = common::gaussian(&mut rng, rows, d);
    let wx = common::gaussian(&mut rng, d, nx);
    let wy = common::gaussian(&mut rng, d, ny);
    let succ: Vec<Option<(Domain, usize)>> = (0..rows)
        .map(|r| match r % 3 {
            0 => None,
            1 => Some((Domain::X, rng.random_range(0..nx))),
            _ => Some((Domain::Y, rng.random_range(0..ny))),
        })
        .collect();

    let mut single = Vec::new();
    let mut cross = Vec::new();
    for (r, s) in succ.iter().enumerate() {
        let Some((dom, t)) = *s else { continue };
        let head = if dom == Domain::X { &wx } else { &wy };
        cross.push(nll(&scores(&h.row(r).to_vec(), head), t));
        if dom == Domain::X {
            let sum: Vec<f64> = (0..d).map(|i| hx[[r, i]] + h[[r, i]]).collect();
            single.push(nll(&scores(&sum, &wx), t));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let got = single_domain_loss(&hx, &h, &wx, &succ, Domain::X).unwrap();
    assert_eq!(got.positions, single.len());
    assert!((got.value - mean(&single)).abs() < 1e-12);
    let got = cross_domain_loss(&h, &wx, &wy, &succ).unwrap();
    assert_eq!(got.positions, cross.len());
    assert!((got.value - mean(&cross)).abs() < 1e-12);
}

#[test]
fn infonce_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let a = common::gaussian(&mut rng, 6, 4);
    let p = common::gaussian(&mut rng, 6, 4);
    let unit = |m: &Mat, r: usize| {
        let n = m.row(r).dot(&m.row(r)).sqrt();
        m.row(r).mapv(|v| v / n)
    };
    let tau = 0.2;
    let mut expected = 0.0;
    for i in 0..6 {
        let s: Vec<f64> = (0..6)
            .map(|j| unit(&a, i).dot(&unit(&p, j)) / tau)
            .collect();
        expected += nll(&s, i);
    }
    assert!((intra_infonce(&a, &p, tau).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn total_weights_each_term() {
    let parts = LossParts {
        single_x: 1.0,
        single_y: 2.0,
        intra_x: 3.0,
        intra_y: 4.0,
        cross: 5.0,
        inter: 6.0,
    };
    let (eta, l1, l2) = (0.8, 0.3, 0.6);
    let expected = eta * (1.0 + 2.0 + l1 * (3.0 + 4.0)) + (1.0 - eta) * (5.0 + l2 * 6.0);
    assert!((total_loss(&parts, eta, l1, l2) - expected).abs() < 1e-12);
}

proptest! {
    #[test]
    fn eta_is_monotone_and_bounded(n in 1usize..300, a in 0usize..500, b in 0usize..500) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(anneal_eta(hi, n) <= anneal_eta(lo, n));
        prop_assert!((0.5..=1.0).contains(&anneal_eta(a, n)));
    }

    #[test]
    fn infonce_is_permutation_invariant(seed in any::<u64>(), m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::gaussian(&mut rng, m, 3);
        let p = common::gaussian(&mut rng, m, 3);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        let pa = a.select(ndarray::Axis(0), &perm);
        let pp = p.select(ndarray::Axis(0), &perm);
        let x = intra_infonce(&a, &p, 0.2).unwrap();
        let y = intra_infonce(&pa, &pp, 0.2).unwrap();
        prop_assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
    }
}

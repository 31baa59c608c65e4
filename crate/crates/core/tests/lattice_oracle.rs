//! Lattice recursions against explicit path enumeration.

mod common;

use common::{random_grid, random_target, rng};
use rand::Rng;
use repkd::lattice::oracle::{binomial, enumerate_paths, nll_by_enumeration, posterior_by_enumeration};
use repkd::lattice::{analyze, transducer_grad, transducer_nll, AlphaBetaGrids};

#[test]
fn nll_and_posterior_match_enumeration() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let frames = r.random_range(1..=6);
        let n = r.random_range(0..=(10 - frames).min(4));
        let classes = r.random_range(2..=5);
        let g = random_grid(&mut r, frames, n, classes);
        let y = random_target(&mut r, n, classes);
        let res = analyze(&g, &y).unwrap();
        let brute = nll_by_enumeration(&g, &y).unwrap();
        assert!((res.nll - brute).abs() < 1e-6, "{} vs {brute}", res.nll);
        let q = posterior_by_enumeration(&g, &y).unwrap();
        for i in 0..n {
            for t in 0..frames {
                assert!((res.posterior.q.get(i, t) - q.get(i, t)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn path_counts_are_binomial() {
    for frames in 1..=6 {
        for n in 0..=(12 - frames) {
            let y = vec![0; n];
            let paths = enumerate_paths(frames, &y).unwrap();
            assert_eq!(paths.len() as u64, binomial((frames + n - 1) as u64, n as u64));
        }
    }
}

#[test]
fn forward_and_backward_totals_agree() {
    let mut r = rng(12);
    for _ in 0..300 {
        let frames = r.random_range(1..40);
        let n = r.random_range(0..20);
        let g = random_grid(&mut r, frames, n, 6);
        let y = random_target(&mut r, n, 6);
        let ab = AlphaBetaGrids::compute(&g, &y).unwrap();
        let a = ab.total_from_alpha(&g);
        assert!((a - ab.total_from_beta()).abs() < 1e-6 * a.abs().max(1.0));
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(13);
    for _ in 0..100 {
        let frames = r.random_range(1..5);
        let n = r.random_range(0..4);
        let g = random_grid(&mut r, frames, n, 4);
        let y = random_target(&mut r, n, 4);
        let analytic = transducer_grad(&g, &y).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let (mut up, mut down) = (g.clone(), g.clone());
                up.values_mut()[i] += h;
                down.values_mut()[i] -= h;
                (transducer_nll(&up, &y).unwrap() - transducer_nll(&down, &y).unwrap()) / (2.0 * h)
            })
            .collect();
        assert!(common::rel_err(&analytic, &numeric) < 1e-4);
    }
}

#[test]
fn posterior_mass_on_emission_frame() {
    // q_i(t) is the share of paths emitting y_i at frame t, weighted by probability
    let mut r = rng(14);
    let g = random_grid(&mut r, 4, 3, 4);
    let y = random_target(&mut r, 3, 4);
    let paths = enumerate_paths(4, &y).unwrap();
    let q = posterior_by_enumeration(&g, &y).unwrap();
    for i in 0..3 {
        let row: f64 = (0..4).map(|t| q.get(i, t)).sum();
        assert!((row - 1.0).abs() < 1e-12);
    }
    assert!(paths.iter().all(|p| p.emission_frames().windows(2).all(|w| w[0] <= w[1])));
}

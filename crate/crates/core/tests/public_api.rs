//! Cross-checks between independent routes through the public API.

use treewave_core::mc::{line_dies, trial_seed};
use treewave_core::params::{expected_ones, extinction_fixed_point, phi0};
use treewave_core::synth::{coefficients, magnitude};
use treewave_core::tree::sample_tree;
use treewave_core::{KernelSchedule, PairDistribution, Sequence};

fn bernoulli(p: f64, q: f64) -> KernelSchedule {
    KernelSchedule::product_bernoulli(Sequence::Constant(p), Sequence::Constant(q)).unwrap()
}

#[test]
fn finite_depth_extinction_converges_to_the_fixed_point() {
    for p in [0.55, 0.7, 0.8, 0.95] {
        let s = bernoulli(p, 0.0);
        let closed = ((1.0 - p) / p).powi(2);
        assert!((extinction_fixed_point(&PairDistribution::product_bernoulli(p)) - closed).abs() < 1e-12);
        assert!((line_dies(&s, 0, 2000) - closed).abs() < 1e-9, "p = {p}");
    }
    // Subcritical lines die surely.
    assert!((line_dies(&bernoulli(0.4, 0.0), 0, 2000) - 1.0).abs() < 1e-12);
}

#[test]
fn mean_ones_matches_samples() {
    let s = bernoulli(0.6, 0.1).with_initial_law(0.5).unwrap();
    let (depth, n) = (8, 4000u64);
    let counts: Vec<f64> = (0..n)
        .map(|i| sample_tree(&s, depth, trial_seed(11, i)).unwrap().count_ones(depth) as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / n as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - expected_ones(&s, depth)).abs() < 4.0 * se, "{mean} vs {}", expected_ones(&s, depth));
}

#[test]
fn all_zero_chain_is_empty_at_every_depth() {
    let quiet = PairDistribution::point(false, false);
    let s = KernelSchedule::constant(quiet, quiet).unwrap().with_initial_law(0.0).unwrap();
    for j in 0..20 {
        assert_eq!(phi0(&s, j), 1.0);
    }
}

#[test]
fn integrated_field_matches_shifted_exponents() {
    let s = bernoulli(0.7, 0.2);
    let t = sample_tree(&s, 10, 5).unwrap();
    let c = coefficients(&t, 0.5, 2.0).unwrap();
    let shifted = coefficients(&t, 0.75, 2.25).unwrap();
    let integrated = c.fractional_integrate(0.25).unwrap();
    for j in 0..=10 {
        for (a, b) in integrated.level(j).iter().zip(shifted.level(j)) {
            assert!((a - b).abs() <= 1e-15 * b.abs(), "level {j}: {a} vs {b}");
        }
    }
    // Each coefficient sits at one of the two shifted magnitudes.
    for j in 0..=10 {
        for a in integrated.level(j) {
            let m = a.abs();
            let near = |h: f64| (m - magnitude(h, j)).abs() <= 1e-15 * m;
            assert!(near(0.75) || near(2.25), "level {j}: {a}");
        }
    }
}

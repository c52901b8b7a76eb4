//! Module invariants as proptest properties.
//!
//! Shared by the `properties` target (one `#[test]` each) and the
//! `acceptance` runner (all of them, one summary line). Every property runs
//! on its own deterministic RNG so results do not depend on test order.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use treewave::core::analysis::{
    box_dimension, check_construction, construct_point, holder_field, ConstructionOptions, HolderEstimator,
    HolderProbe, LevelSets, MembershipProbe,
};
use treewave::core::kernels::{KernelFamily, Lacunary, ROW_TOLERANCE};
use treewave::core::mc::{count_event, mc_probability, trial_seed, Event, McResult};
use treewave::core::params::{self, extinction_fixed_point, DerivedParams, Regime};
use treewave::core::spectrum::{predict_spectrum, DimensionAt, EmptinessLaw, SpectrumError, LOG_TAIL_TOLERANCE};
use treewave::core::stats::{wilson_interval, Moments, Z99};
use treewave::core::synth::{
    analyze, basis_function, coefficients, magnitude, synthesize, CoefficientField, Wavelet, MEYER_PERIODIC_L1_SUP,
};
use treewave::core::tree::{fill_children, sample_tree, words_for_level};
use treewave::core::{KernelSchedule, PairDistribution, Sequence, TreeSample};
use treewave::format;

/// Cases per property.
pub const CASES: u32 = 100;
/// Deepest tree the suite samples.
pub const MAX_DEPTH: usize = 12;

pub type Property = fn(u32) -> Result<(), String>;

#[allow(dead_code)]
pub const ALL: &[(&str, Property)] = &[
    ("kernels_rows_normalized", kernels_rows_normalized),
    ("kernels_lacunary_bracket", kernels_lacunary_bracket),
    ("kernels_pure", kernels_pure),
    ("params_gamma_eta_monte_carlo", params_gamma_eta_monte_carlo),
    ("params_phi0_monte_carlo", params_phi0_monte_carlo),
    ("params_phi_gf_monotone", params_phi_gf_monotone),
    ("params_varsigma_constant", params_varsigma_constant),
    ("params_theta_cesaro", params_theta_cesaro),
    ("params_ranges", params_ranges),
    ("tree_reproducible", tree_reproducible),
    ("tree_markov_locality", tree_markov_locality),
    ("tree_fresh_subset", tree_fresh_subset),
    ("tree_theta_cover", tree_theta_cover),
    ("tree_monotone_extinction", tree_monotone_extinction),
    ("tree_level_shape", tree_level_shape),
    ("tree_degenerate_rows", tree_degenerate_rows),
    ("synth_field_values", synth_field_values),
    ("synth_round_trip", synth_round_trip),
    ("synth_uniform_regularity", synth_uniform_regularity),
    ("synth_linearity", synth_linearity),
    ("synth_integration_composes", synth_integration_composes),
    ("synth_mean_zero", synth_mean_zero),
    ("spectrum_prediction_invariants", spectrum_prediction_invariants),
    ("spectrum_exact_tail", spectrum_exact_tail),
    ("spectrum_survival_fixed_point", spectrum_survival_fixed_point),
    ("analysis_holder_bounds", analysis_holder_bounds),
    ("analysis_window_monotone", analysis_window_monotone),
    ("analysis_alpha_monotone", analysis_alpha_monotone),
    ("analysis_limsup_consistency", analysis_limsup_consistency),
    ("analysis_construction_avoids_balls", analysis_construction_avoids_balls),
    ("analysis_box_dimension_exact", analysis_box_dimension_exact),
    ("mc_result_invariants", mc_result_invariants),
    ("mc_wilson_coverage", mc_wilson_coverage),
    ("io_tree_round_trip", io_tree_round_trip),
    ("io_path_round_trip", io_path_round_trip),
    ("io_json_round_trip", io_json_round_trip),
];

fn run<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Strategies

fn arb_pair() -> impl Strategy<Value = PairDistribution> {
    prop_oneof![
        3 => [0.0..1.0f64, 0.0..1.0, 0.0..1.0, 0.0..1.0].prop_map(|w| {
            let t: f64 = w.iter().sum::<f64>() + 4e-3;
            PairDistribution::new((w[0] + 1e-3) / t, (w[1] + 1e-3) / t, (w[2] + 1e-3) / t, 1.0 - (w[0] + w[1] + w[2] + 3e-3) / t)
                .unwrap()
        }),
        1 => (any::<bool>(), any::<bool>()).prop_map(|(l, r)| PairDistribution::point(l, r)),
        1 => (0.0..=1.0f64).prop_map(PairDistribution::product_bernoulli),
    ]
}

fn arb_seq() -> impl Strategy<Value = Sequence> {
    prop_oneof![
        (0.0..=1.0f64).prop_map(Sequence::Constant),
        (0.0..1.0f64, 0.0..2.0f64, 0.0..2.0f64).prop_map(|(scale, rate, poly)| Sequence::Geometric { scale, rate, poly }),
        prop::collection::vec(0.0..=1.0f64, 1..6).prop_map(Sequence::Table),
    ]
}

fn arb_initial_law() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(0.0), 0.0..=1.0f64]
}

fn arb_schedule() -> impl Strategy<Value = KernelSchedule> {
    let family = prop_oneof![
        (arb_pair(), arb_pair()).prop_map(|(nu0, nu1)| KernelFamily::Constant { nu0, nu1 }),
        prop::collection::vec((arb_pair(), arb_pair()), 1..6)
            .prop_map(|r| KernelFamily::Table { rows: r.into_iter().map(|(a, b)| [a, b]).collect() }),
        (arb_seq(), arb_seq()).prop_map(|(p, q)| KernelFamily::ProductBernoulli { p, q }),
        (0.05..0.95f64, 2u32..5).prop_filter_map("bracket never opens", |(a, b)| Lacunary::new(a, b).ok().map(KernelFamily::Lacunary)),
    ];
    (family, arb_initial_law()).prop_map(|(f, pi)| KernelSchedule::new(f, pi).unwrap())
}

/// Schedules whose state-0 parents never produce a state-1 child.
fn arb_no_refresh_schedule() -> impl Strategy<Value = KernelSchedule> {
    let quiet = PairDistribution::point(false, false);
    prop_oneof![
        arb_pair().prop_map(move |nu1| KernelSchedule::constant(quiet, nu1).unwrap()),
        arb_seq().prop_map(|p| KernelSchedule::product_bernoulli(p, Sequence::Constant(0.0)).unwrap()),
        prop::collection::vec(arb_pair(), 1..6).prop_map(move |r| {
            KernelSchedule::new(KernelFamily::Table { rows: r.into_iter().map(|b| [quiet, b]).collect() }, 1.0).unwrap()
        }),
    ]
}

#[derive(Clone, Debug)]
struct Model {
    s: KernelSchedule,
    h_low: f64,
    h_high: f64,
    depth: usize,
    seed: u64,
}

fn arb_model(min_depth: usize, max_depth: usize) -> impl Strategy<Value = Model> {
    (
        arb_schedule(),
        0.1..2.0f64,
        prop_oneof![3 => (0.05..3.0f64).prop_map(Some), 1 => Just(None)],
        min_depth..=max_depth,
        any::<u64>(),
    )
        .prop_map(|(s, h_low, gap, depth, seed)| Model {
            s,
            h_low,
            h_high: gap.map_or(f64::INFINITY, |g| h_low + g),
            depth,
            seed,
        })
}

fn tree(m: &Model) -> TreeSample {
    sample_tree(&m.s, m.depth, m.seed).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

// ---------------------------------------------------------------------------
// kernels

pub fn kernels_rows_normalized(cases: u32) -> Result<(), String> {
    run(cases, arb_schedule(), |s| {
        for j in 0..=64 {
            for state in [false, true] {
                let a = s.kernel_at(j, state).as_array();
                let sum: f64 = a.iter().sum();
                ensure(a.iter().all(|p| *p >= 0.0), || format!("negative entry at ({j}, {state}): {a:?}"))?;
                ensure((sum - 1.0).abs() <= ROW_TOLERANCE, || format!("row ({j}, {state}) sums to {sum}"))?;
            }
        }
        Ok(())
    })
}

pub fn kernels_lacunary_bracket(cases: u32) -> Result<(), String> {
    run(cases, (0.05..0.95f64, 2u32..6), |(a, b)| {
        let Ok(l) = Lacunary::new(a, b) else {
            return Ok(());
        };
        let c = a * (1.0 - 1.0 / b as f64);
        let mut n = l.n0() + 1;
        // Beyond ~1000 levels the refresh probability underflows.
        while l.jn(n) <= 1000 {
            let jn = l.jn(n) as f64;
            let q = l.q(l.jn(n) as usize - 1);
            let lo = (-(jn - 1.0)).exp2();
            let hi = jn.powi(-2) * ((c - 1.0) * jn).exp2();
            ensure(lo <= q && q <= hi, || format!("n = {n}: q = {q} outside [{lo}, {hi}]"))?;
            n += 1;
        }
        Ok(())
    })
}

pub fn kernels_pure(cases: u32) -> Result<(), String> {
    run(cases, (arb_schedule(), 0usize..200), |(s, j)| {
        let twin = s.clone();
        for state in [false, true] {
            let a = s.kernel_at(j, state).as_array().map(f64::to_bits);
            let b = s.kernel_at(j, state).as_array().map(f64::to_bits);
            let c = twin.kernel_at(j, state).as_array().map(f64::to_bits);
            ensure(a == b && b == c, || format!("kernel_at({j}, {state}) not reproducible"))?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// params

/// Draws at least `min_draws` child pairs through the tree sampler for
/// parents at level `j` all in `state`; returns (#ones, any-one) moments.
fn children_moments(s: &KernelSchedule, j: usize, state: bool, seed: u64, min_draws: usize) -> (Moments, Moments) {
    let n = 1usize << j;
    let pw = words_for_level(j);
    let mut parents = vec![0u64; pw];
    if state {
        for k in 0..n {
            parents[k / 64] |= 1 << (k % 64);
        }
    }
    let (mut ones, mut any) = (Moments::default(), Moments::default());
    let reps = min_draws.div_ceil(n);
    for r in 0..reps {
        let mut out = vec![0u64; words_for_level(j + 1)];
        fill_children(s, trial_seed(seed, r as u64), j, &parents, 0, pw, &mut out);
        for k in 0..n {
            let bit = |c: usize| (out[c / 64] >> (c % 64)) & 1;
            let m = bit(2 * k) + bit(2 * k + 1);
            ones.push(m as f64);
            any.push((m > 0) as u8 as f64);
        }
    }
    (ones, any)
}

pub fn params_gamma_eta_monte_carlo(cases: u32) -> Result<(), String> {
    run(cases, (arb_schedule(), 0usize..=MAX_DEPTH, any::<u64>()), |(s, j, seed)| {
        let (ones, _) = children_moments(&s, j, true, seed, 100_000);
        let (_, any) = children_moments(&s, j, false, seed ^ 0x5555, 100_000);
        // Exact MC expectations, written independently of the library.
        let nu1 = s.kernel_at(j, true);
        let nu0 = s.kernel_at(j, false);
        let gamma = 2.0 * nu1.p11 + nu1.p01 + nu1.p10;
        let eta = nu0.p01 + nu0.p10 + nu0.p11;
        ensure((params::gamma(&s, j) - gamma).abs() < 1e-15, || "gamma formula".into())?;
        ensure((params::eta(&s, j) - eta).abs() < 1e-15, || "eta formula".into())?;
        for (what, m, exact) in [("gamma", &ones, gamma), ("eta", &any, eta)] {
            let tol = 3.0 * m.std_error() + 1e-12;
            ensure((m.mean() - exact).abs() <= tol, || {
                format!("{what}_{j}: MC {} vs {exact} (3 SE = {tol})", m.mean())
            })?;
        }
        Ok(())
    })
}

pub fn params_phi0_monte_carlo(cases: u32) -> Result<(), String> {
    run(cases, (arb_schedule(), 0usize..=8, any::<u64>()), |(s, j, seed)| {
        let trials = 100_000;
        let hits = count_event(&s, j, Event::SEmpty, seed, 0..trials, MAX_DEPTH).unwrap();
        let (lo, hi) = wilson_interval(hits, trials, Z99);
        let phi = params::phi0(&s, j);
        ensure(lo - 1e-15 <= phi && phi <= hi + 1e-15, || {
            format!("phi0({j}) = {phi} outside [{lo}, {hi}] ({hits}/{trials})")
        })
    })
}

pub fn params_phi_gf_monotone(cases: u32) -> Result<(), String> {
    run(cases, (arb_schedule(), 0usize..=40), |(s, j)| {
        ensure(params::phi_gf(&s, j, 1.0) == 1.0, || format!("Φ_{j}(1) = {}", params::phi_gf(&s, j, 1.0)))?;
        let mut prev = params::phi_gf(&s, j, 0.0);
        ensure(prev == params::phi0(&s, j), || "Φ_j(0) differs from phi0".into())?;
        for i in 1..=64 {
            let v = params::phi_gf(&s, j, i as f64 / 64.0);
            ensure(v >= prev - 1e-15, || format!("Φ_{j} decreases near z = {}", i as f64 / 64.0))?;
            prev = v;
        }
        Ok(())
    })
}

pub fn params_varsigma_constant(cases: u32) -> Result<(), String> {
    // Constant ν_1 with γ > 1; ν_0 is irrelevant to ς.
    let nu1 = arb_pair().prop_filter("γ ≤ 1.05", |d| d.mean_ones() > 1.05);
    run(cases, (nu1, arb_pair(), 0usize..10), |(nu1, nu0, j)| {
        let s = KernelSchedule::constant(nu0, nu1).unwrap();
        let tol = 1e-10;
        let v = params::varsigma(&s, j, tol).unwrap();
        // Direct partial sums of 2 ν(11) / (γ_n ∏_{ℓ=j}^{n} γ_ℓ).
        let g = nu1.p01 + nu1.p10 + 2.0 * nu1.p11;
        let (mut sum, mut prod) = (0.0, 1.0);
        let mut n = 0;
        loop {
            prod *= g;
            let t = 2.0 * nu1.p11 / (g * prod);
            sum += t;
            n += 1;
            if t < 1e-18 || n > 200_000 {
                break;
            }
        }
        let remainder = 2.0 * nu1.p11 / (g * prod * (g - 1.0));
        ensure((v.value - sum).abs() <= tol + remainder + 1e-12 * sum, || {
            format!("ς_{j} = {} vs partial sum {sum}", v.value)
        })
    })
}

pub fn params_theta_cesaro(cases: u32) -> Result<(), String> {
    // Product-Bernoulli with an eventually constant table of p; γ_j = 2 p_j.
    let table = prop::collection::vec(0.3..=1.0f64, 1..8);
    run(cases, (table, 0.0..=1.0f64), |(ps, q)| {
        let s = KernelSchedule::product_bernoulli(Sequence::Table(ps.clone()), Sequence::Constant(q)).unwrap();
        let th = params::theta(&s, 64);
        let limit = (2.0 * ps[ps.len() - 1]).log2();
        ensure(th.exact && (th.value - limit).abs() < 1e-15, || format!("θ = {:?}, expected {limit}", th))?;
        // |θ − mean_{j<J} log₂ γ_j| ≤ Σ_j |log₂ γ_j − θ| / J.
        let k: f64 = ps.iter().map(|p| ((2.0 * p).log2() - limit).abs()).sum();
        for depth in [16usize, 32, 64] {
            let avg = (0..depth).map(|j| (2.0 * ps[j.min(ps.len() - 1)]).log2()).sum::<f64>() / depth as f64;
            ensure((th.value - avg).abs() <= k / depth as f64 + 1e-12, || {
                format!("J = {depth}: Cesàro {avg} vs θ {}", th.value)
            })?;
        }
        Ok(())
    })
}

pub fn params_ranges(cases: u32) -> Result<(), String> {
    run(cases, arb_model(2, 40), |m| {
        let Ok(p) = DerivedParams::compute(&m.s, m.h_low, m.h_high, m.depth) else {
            // Only γ = 0 inside the ς sum is allowed to fail.
            return Ok(());
        };
        ensure(p.gamma.iter().all(|g| (0.0..=2.0).contains(g)), || "γ outside [0, 2]".into())?;
        ensure(p.eta.iter().all(|e| (0.0..=1.0).contains(e)), || "η outside [0, 1]".into())?;
        ensure(!p.theta.value.is_finite() || p.theta.value <= 1.0, || format!("θ = {}", p.theta.value))?;
        ensure(p.h_tilde.lo >= m.h_low, || format!("h̃.lo = {} < ḥ", p.h_tilde.lo))?;
        ensure(p.phi0.iter().all(|f| (0.0..=1.0).contains(f)), || "Φ_j(0) outside [0, 1]".into())?;
        ensure(m.s.initial_law != 1.0 || p.phi0[0] == 0.0, || format!("Φ_0(0) = {} with root in state 1", p.phi0[0]))
    })
}

// ---------------------------------------------------------------------------
// tree

pub fn tree_reproducible(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, MAX_DEPTH), |m| {
        ensure(format::encode_tree(&tree(&m)) == format::encode_tree(&tree(&m)), || "bytes differ".into())
    })
}

pub fn tree_markov_locality(cases: u32) -> Result<(), String> {
    run(cases, (arb_model(1, MAX_DEPTH), arb_schedule(), any::<prop::sample::Index>()), |(m, other, at)| {
        // Same law up to kernel level j − 1, anything afterwards.
        let j = at.index(m.depth + 1);
        let rows = (0..m.depth)
            .map(|l| {
                let src = if l < j { &m.s } else { &other };
                [src.kernel_at(l, false), src.kernel_at(l, true)]
            })
            .collect::<Vec<_>>();
        let rows = if rows.is_empty() { vec![[m.s.kernel_at(0, false), m.s.kernel_at(0, true)]] } else { rows };
        let mixed = KernelSchedule::new(KernelFamily::Table { rows }, m.s.initial_law).unwrap();
        let a = tree(&m);
        let b = sample_tree(&mixed, m.depth, m.seed).unwrap();
        for l in 0..=j {
            ensure(a.level_words(l) == b.level_words(l), || format!("level {l} ≤ {j} changed"))?;
        }
        Ok(())
    })
}

pub fn tree_fresh_subset(cases: u32) -> Result<(), String> {
    run(cases, arb_model(1, MAX_DEPTH), |m| {
        let t = tree(&m);
        for j in 1..=m.depth {
            let ones = t.level_ones(j);
            for k in t.fresh_ones(j) {
                ensure(ones.binary_search(&k).is_ok(), || format!("fresh ({j}, {k}) not in S_j"))?;
                ensure(!t.state(j - 1, k / 2), || format!("fresh ({j}, {k}) has a state-1 father"))?;
            }
        }
        Ok(())
    })
}

pub fn tree_theta_cover(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, MAX_DEPTH), |m| {
        let t = tree(&m);
        for j in 0..=m.depth {
            for c in t.theta_cover(j) {
                ensure(t.state(j, c.offset), || format!("cover ({j}, {}) in state 0", c.offset))?;
                // The run counts the vertex itself, so it spans at most the
                // j ancestors plus one.
                ensure(c.run_length >= 1 && c.run_length as usize <= j + 1, || {
                    format!("run {} at level {j}", c.run_length)
                })?;
            }
        }
        Ok(())
    })
}

pub fn tree_monotone_extinction(cases: u32) -> Result<(), String> {
    run(cases, (arb_no_refresh_schedule(), 0usize..=MAX_DEPTH, any::<u64>()), |(s, depth, seed)| {
        let t = sample_tree(&s, depth, seed).unwrap();
        let counts: Vec<u64> = (0..=depth).map(|j| t.count_ones(j)).collect();
        for j in 1..=depth {
            ensure(counts[j] == 0 || counts[j - 1] > 0, || format!("S_{j} nonempty after empty level: {counts:?}"))?;
        }
        Ok(())
    })
}

pub fn tree_level_shape(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, MAX_DEPTH), |m| {
        let t = tree(&m);
        for j in 0..=m.depth {
            let w = t.level_words(j);
            ensure(w.len() == words_for_level(j), || format!("level {j}: {} words", w.len()))?;
            // Bits past 2^j are padding and stay clear.
            if j < 6 {
                ensure(w[0] >> (1u32 << j) == 0, || format!("level {j} has bits past 2^j"))?;
            }
            let n = (0..1u64 << j).filter(|&k| t.state(j, k)).count() as u64;
            ensure(n == t.count_ones(j), || format!("level {j}: count mismatch"))?;
        }
        Ok(())
    })
}

pub fn tree_degenerate_rows(cases: u32) -> Result<(), String> {
    let point = (any::<bool>(), any::<bool>()).prop_map(|(l, r)| PairDistribution::point(l, r));
    run(cases, (point.clone(), point, 0usize..=MAX_DEPTH, any::<u64>()), |(nu0, nu1, depth, seed)| {
        let s = KernelSchedule::constant(nu0, nu1).unwrap();
        let t = sample_tree(&s, depth, seed).unwrap();
        for j in 0..depth {
            for k in 0..1u64 << j {
                let d = if t.state(j, k) { nu1 } else { nu0 };
                let (l, r) = d.degenerate().unwrap();
                ensure(t.state(j + 1, 2 * k) == l && t.state(j + 1, 2 * k + 1) == r, || {
                    format!("children of ({j}, {k}) not determined by the parent")
                })?;
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// synth

pub fn synth_field_values(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, MAX_DEPTH), |m| {
        let t = tree(&m);
        let c = coefficients(&t, m.h_low, m.h_high).unwrap();
        for j in 0..=m.depth {
            let (big, small) = (
                if j == 0 { 1.0 } else { (-m.h_low * j as f64).exp2() },
                if j == 0 { 1.0 } else if m.h_high.is_infinite() { 0.0 } else { (-m.h_high * j as f64).exp2() },
            );
            for k in 0..1u64 << j {
                let v = c.level(j)[k as usize];
                let want = if t.state(j, k) { big } else { small };
                ensure(v == want, || format!("C({j}, {k}) = {v}, expected {want}"))?;
                ensure(c.is_large(j, k) == t.state(j, k), || format!("mask ({j}, {k})"))?;
            }
        }
        Ok(())
    })
}

pub fn synth_round_trip(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, 8), |m| {
        let c = coefficients(&tree(&m), m.h_low, m.h_high).unwrap();
        let p = synthesize(&c, Wavelet::Meyer, m.depth + 4).unwrap();
        let back = analyze(&p.values, Wavelet::Meyer, m.depth).unwrap();
        for j in 0..=m.depth {
            for (k, (a, b)) in c.level(j).iter().zip(&back[j]).enumerate() {
                ensure((a - b).abs() <= 1e-6 * a.abs() + 1e-13, || format!("({j}, {k}): {a} → {b}"))?;
            }
        }
        Ok(())
    })
}

/// `sup_x Σ_k |ψ'(x − k)|` for the Meyer wavelet, by centred differences on
/// a fine grid (1% margin for the discretisation).
fn meyer_derivative_sup() -> f64 {
    let (j, g) = (6, 18);
    let psi = basis_function(Wavelet::Meyer, j, 0, g);
    let n = psi.len();
    let per = 1usize << (g - j);
    // Argument step of ψ is 2^{j−g}.
    let inv_step = (1usize << (g - j)) as f64;
    let d = |i: usize| (psi[(i + 1) % n] - psi[(i + n - 1) % n]) * 0.5 * inv_step;
    let mut best = 0.0f64;
    for r in 0..per {
        let s: f64 = (0..1usize << j).map(|k| d(k * per + r).abs()).sum();
        best = best.max(s);
    }
    1.01 * best
}

pub fn synth_uniform_regularity(cases: u32) -> Result<(), String> {
    let s1 = meyer_derivative_sup();
    // ḥ < 1: first differences only see exponents below one.
    let model = (arb_model(2, 10), 0.1..0.9f64).prop_map(|(mut m, hl)| {
        m.h_high = if m.h_high.is_infinite() { m.h_high } else { hl + (m.h_high - m.h_low) };
        m.h_low = hl;
        m
    });
    run(cases, model, move |m| {
        let c = coefficients(&tree(&m), m.h_low, m.h_high).unwrap();
        let grid = m.depth + 4;
        let p = synthesize(&c, Wavelet::Meyer, grid).unwrap();
        // Split the level sum at 2^{-j0} ≈ d: derivative bound below, sup
        // bound above.
        let hl = m.h_low;
        let a = (1.0 - hl).exp2();
        let k = s1 * a / (a - 1.0) + 2.0 * MEYER_PERIODIC_L1_SUP / (1.0 - (-hl).exp2());
        let n = p.values.len();
        for l in 1..=m.depth {
            let shift = n >> l;
            let d = (-(l as f64)).exp2();
            let worst = (0..n).map(|i| (p.values[(i + shift) % n] - p.values[i]).abs()).fold(0.0, f64::max);
            ensure(worst <= k * d.powf(hl), || format!("d = 2^-{l}: {worst} > K d^ḥ = {}", k * d.powf(hl)))?;
        }
        Ok(())
    })
}

fn arb_field(depth: usize) -> impl Strategy<Value = CoefficientField> {
    let levels = (0..=depth)
        .map(|j| prop::collection::vec(-0.5..0.5f64, 1usize << j))
        .collect::<Vec<_>>();
    levels.prop_map(move |raw| {
        let h = 0.5;
        let levels: Vec<Vec<f64>> =
            raw.into_iter().enumerate().map(|(j, v)| v.into_iter().map(|x| x * magnitude(h, j)).collect()).collect();
        let large = (0..=depth).map(|j| vec![0u64; words_for_level(j)]).collect();
        CoefficientField::from_parts(h, 2.0, levels, large)
    })
}

pub fn synth_linearity(cases: u32) -> Result<(), String> {
    let depth = 7;
    run(cases, (arb_field(depth), arb_field(depth), -1.0..1.0f64, -1.0..1.0f64), |(c1, c2, a, b)| {
        let combo: Vec<Vec<f64>> =
            c1.levels().iter().zip(c2.levels()).map(|(x, y)| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect()).collect();
        let large = (0..=depth).map(|j| vec![0u64; words_for_level(j)]).collect();
        let c = CoefficientField::from_parts(0.5, 2.0, combo, large);
        let g = depth + 4;
        let (r, r1, r2) = (
            synthesize(&c, Wavelet::Meyer, g).unwrap(),
            synthesize(&c1, Wavelet::Meyer, g).unwrap(),
            synthesize(&c2, Wavelet::Meyer, g).unwrap(),
        );
        for i in 0..r.values.len() {
            let want = a * r1.values[i] + b * r2.values[i];
            ensure((r.values[i] - want).abs() <= 1e-10, || format!("x_{i}: {} vs {want}", r.values[i]))?;
        }
        Ok(())
    })
}

pub fn synth_integration_composes(cases: u32) -> Result<(), String> {
    run(cases, (arb_model(0, MAX_DEPTH), 0.0..2.0f64, 0.0..2.0f64), |(m, s, t)| {
        let c = coefficients(&tree(&m), m.h_low, m.h_high).unwrap();
        let two = c.fractional_integrate(s).unwrap().fractional_integrate(t).unwrap();
        let one = c.fractional_integrate(s + t).unwrap();
        ensure(two == one, || format!("orders {s} + {t} do not compose"))
    })
}

pub fn synth_mean_zero(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, 10), |m| {
        let c = coefficients(&tree(&m), m.h_low, m.h_high).unwrap();
        let p = synthesize(&c, Wavelet::Meyer, m.depth + 4).unwrap();
        let mean = p.values.iter().sum::<f64>() / p.values.len() as f64;
        let max = p.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        ensure(mean.abs() <= 1e-8 * max, || format!("mean {mean}, max {max}"))
    })
}

// ---------------------------------------------------------------------------
// spectrum

pub fn spectrum_prediction_invariants(cases: u32) -> Result<(), String> {
    run(cases, arb_model(2, 40), |m| {
        let Ok(p) = DerivedParams::compute(&m.s, m.h_low, m.h_high, m.depth) else {
            return Ok(());
        };
        let sp = match predict_spectrum(&m.s, &p) {
            Ok(sp) => sp,
            // The only admissible failures: out of model, or a bracket
            // straddling a case boundary.
            Err(SpectrumError::OutOfScope { theta }) => {
                return ensure(theta >= 1.0 && p.regime == Regime::OutOfScope, || format!("out of scope at θ = {theta}"));
            }
            Err(SpectrumError::Ambiguous(_)) => {
                return ensure(!p.h_tilde.is_exact(), || "ambiguity with an exact h̃".into());
            }
        };
        ensure(sp.regime == p.regime && sp.regime != Regime::OutOfScope, || format!("{:?}", sp.regime))?;
        let in_range = |d: f64| d == f64::NEG_INFINITY || (0.0..=1.0).contains(&d);
        let mut grid: Vec<f64> = (0..=80).map(|i| i as f64 * 0.1).collect();
        grid.extend([m.h_low, m.h_high, sp.h_tilde, sp.typical_exponent]);
        for h in grid.into_iter().filter(|h| h.is_finite()) {
            let values = match sp.eval(h) {
                DimensionAt::Sure(d) => vec![d],
                DimensionAt::Random(a, b) => vec![a, b],
            };
            for d in values {
                ensure(in_range(d), || format!("d({h}) = {d}"))?;
                ensure(d == f64::NEG_INFINITY || (h >= m.h_low && h <= m.h_high), || {
                    format!("d({h}) = {d} outside [ḥ, h̄]")
                })?;
            }
        }
        if sp.regime == Regime::DivergentRefresh {
            let top = sp.h_tilde.min(m.h_high);
            if top.is_finite() {
                ensure(sp.eval(top) == DimensionAt::Sure(1.0), || format!("d({top}) = {:?}", sp.eval(top)))?;
            }
        }
        let (lo, hi) = sp.p_dim_neg_inf.range();
        ensure(0.0 <= lo && lo <= hi && hi <= 1.0, || format!("P(d(ḥ) = −∞) range [{lo}, {hi}]"))
    })
}

pub fn spectrum_exact_tail(cases: u32) -> Result<(), String> {
    run(cases, arb_model(2, 30), |m| {
        let Ok(p) = DerivedParams::compute(&m.s, m.h_low, m.h_high, m.depth) else {
            return Ok(());
        };
        if let EmptinessLaw::Exact { value, error_bound } = treewave::core::spectrum::p_theta_empty(&m.s, &p) {
            ensure(error_bound < LOG_TAIL_TOLERANCE, || format!("tail bound {error_bound}"))?;
            ensure((0.0..=1.0).contains(&value), || format!("P(Θ = ∅) = {value}"))?;
        }
        Ok(())
    })
}

/// Smallest fixed point of the offspring generating function by plain
/// iteration from 0.
fn iterate_extinction(nu: &PairDistribution) -> f64 {
    let g = |s: f64| nu.p00 + (nu.p01 + nu.p10) * s + nu.p11 * s * s;
    let mut s = 0.0;
    for _ in 0..1_000_000 {
        let next = g(s);
        if (next - s).abs() < 1e-16 {
            return next;
        }
        s = next;
    }
    s
}

pub fn spectrum_survival_fixed_point(cases: u32) -> Result<(), String> {
    // Stay away from criticality, where plain iteration converges slowly.
    let nu1 = arb_pair().prop_filter("near critical", |d| (d.mean_ones() - 1.0).abs() > 0.05);
    run(cases, nu1, |nu1| {
        let s = KernelSchedule::constant(PairDistribution::point(false, false), nu1).unwrap();
        let p = DerivedParams::compute(&s, 0.5, 2.0, 20).unwrap();
        let oracle = 1.0 - iterate_extinction(&nu1);
        ensure((1.0 - extinction_fixed_point(&nu1) - oracle).abs() <= 1e-8, || "fixed point".into())?;
        let Some(v) = treewave::core::spectrum::p_theta_empty(&s, &p).value() else {
            return Err(TestCaseError::fail(format!("no value for {nu1:?}")));
        };
        ensure((1.0 - v - oracle).abs() <= 1e-8, || format!("1 − P(Θ = ∅) = {} vs {oracle}", 1.0 - v))
    })
}

// ---------------------------------------------------------------------------
// analysis

fn probe(m: &Model, j_min: usize, depth: usize) -> HolderProbe {
    HolderProbe {
        j_min,
        depth,
        ceiling: 8.0 * m.h_low,
    }
}

pub fn analysis_holder_bounds(cases: u32) -> Result<(), String> {
    run(cases, arb_model(2, MAX_DEPTH), |m| {
        let t = tree(&m);
        let sets = LevelSets::from_tree(&t);
        let pr = probe(&m, m.depth.div_ceil(2), m.depth);
        let est = HolderEstimator::new(&sets, m.h_low, m.h_high, pr).unwrap();
        // The ceiling only stands in for an infinite h̄.
        let top = if m.h_high.is_infinite() { pr.ceiling } else { m.h_high };
        for e in holder_field(&est, m.depth + 2).estimates {
            ensure(e.value >= m.h_low && e.value <= top, || format!("ĥ = {} outside [{}, {top}]", e.value, m.h_low))?;
        }
        Ok(())
    })
}

pub fn analysis_window_monotone(cases: u32) -> Result<(), String> {
    run(cases, (arb_model(2, MAX_DEPTH), any::<[prop::sample::Index; 4]>()), |(m, ix)| {
        let t = tree(&m);
        let sets = LevelSets::from_tree(&t);
        // Inner window [a, b] inside outer window [a', b'].
        let b = 1 + ix[0].index(m.depth);
        let a = 1 + ix[1].index(b);
        let b2 = b + ix[2].index(m.depth - b + 1);
        let a2 = 1 + ix[3].index(a);
        let inner = HolderEstimator::new(&sets, m.h_low, m.h_high, probe(&m, a, b)).unwrap();
        let outer = HolderEstimator::new(&sets, m.h_low, m.h_high, probe(&m, a2, b2)).unwrap();
        for i in 0..256 {
            let x = i as f64 / 256.0 + 1.0 / 1024.0;
            let (hi, ho) = (inner.estimate(x).value, outer.estimate(x).value);
            ensure(ho <= hi, || format!("x = {x}: window [{a2}, {b2}] gives {ho} > [{a}, {b}] gives {hi}"))?;
        }
        Ok(())
    })
}

pub fn analysis_alpha_monotone(cases: u32) -> Result<(), String> {
    run(cases, (arb_model(2, MAX_DEPTH), 0.0..1.0f64, 1.01..4.0f64, 1.0..2.0f64), |(m, x, r1, r2)| {
        let t = tree(&m);
        let sets = LevelSets::from_tree(&t);
        let pr = MembershipProbe::new(&sets, m.h_low, m.depth.div_ceil(2), m.depth).unwrap();
        let (a1, a2) = (r1 * m.h_low, r1 * r2 * m.h_low);
        let (l1, l2) = (pr.membership(x, a1).unwrap(), pr.membership(x, a2).unwrap());
        ensure(!l1.in_l || l2.in_l, || format!("x = {x}: in L at α = {a1} but not at {a2}"))?;
        ensure(!l1.in_l_tilde || l2.in_l_tilde, || format!("x = {x}: fresh part not monotone"))
    })
}

pub fn analysis_limsup_consistency(cases: u32) -> Result<(), String> {
    run(cases, (arb_model(2, MAX_DEPTH), 1.01..6.0f64), |(m, r)| {
        let t = tree(&m);
        let sets = LevelSets::from_tree(&t);
        let pr = MembershipProbe::new(&sets, m.h_low, m.depth.div_ceil(2), m.depth).unwrap();
        for i in 0..128 {
            let x = (i as f64 + 0.37) / 128.0;
            let mb = pr.membership(x, r * m.h_low).unwrap();
            // The chain argument needs balls to shrink faster than dyadic
            // intervals; the flag records whether that holds on the window.
            ensure(!mb.nesting_holds || mb.consistent, || format!("x = {x}: {mb:?}"))?;
        }
        Ok(())
    })
}

pub fn analysis_construction_avoids_balls(cases: u32) -> Result<(), String> {
    run(cases, (arb_model(4, MAX_DEPTH), 1.05..3.0f64), |(m, r)| {
        let t = tree(&m);
        let h = r * m.h_low;
        if h >= m.h_high {
            return Ok(());
        }
        let th = params::theta(&m.s, m.depth).value;
        let c = construct_point(&t, &m.s, m.h_low, m.h_high, th, h, ConstructionOptions::default()).unwrap();
        let sets = LevelSets::from_tree(&t);
        check_construction(&c, &sets, m.h_low).map_err(TestCaseError::fail)
    })
}

pub fn analysis_box_dimension_exact(cases: u32) -> Result<(), String> {
    run(cases, (0usize..3, 0usize..10, 5usize..20), |(si, j0, len)| {
        let s = [0.0, 0.5, 1.0][si];
        // Half-integer slopes need even levels to keep counts integral.
        let counts: Vec<(usize, u64)> =
            (0..len).map(|i| 2 * (j0 + i)).map(|j| (j, 1u64 << ((s * j as f64) as u32))).collect();
        let d = box_dimension(&counts).unwrap();
        ensure((d.slope - s).abs() <= 1e-9, || format!("slope {} for s = {s}", d.slope))
    })
}

// ---------------------------------------------------------------------------
// mc

fn check_result(r: &McResult) -> Result<(), TestCaseError> {
    ensure((0.0..=1.0).contains(&r.p_hat), || format!("p̂ = {}", r.p_hat))?;
    ensure(0.0 <= r.interval.0 && r.interval.0 <= r.interval.1 && r.interval.1 <= 1.0, || {
        format!("interval {:?}", r.interval)
    })?;
    ensure(r.successes <= r.trials, || "successes > trials".into())
}

pub fn mc_result_invariants(cases: u32) -> Result<(), String> {
    let events = prop_oneof![
        Just(Event::SEmpty),
        Just(Event::RootSurvival),
        Just(Event::ChainAbsent),
        Just(Event::ThetaNonempty),
        (1usize..4).prop_map(|from| Event::FreshNonempty { from }),
    ];
    run(cases, (arb_model(0, 6), events, 100u64..300), |(m, ev, trials)| {
        let a = mc_probability(&m.s, m.depth, ev, trials, m.seed).unwrap();
        let b = mc_probability(&m.s, m.depth, ev, trials, m.seed).unwrap();
        ensure(a == b, || "same seed, different result".into())?;
        check_result(&a)?;
        let seeds: std::collections::HashSet<u64> = (0..trials).map(|i| trial_seed(m.seed, i)).collect();
        ensure(seeds.len() as u64 == trials, || "replicate seeds collide".into())
    })
}

pub fn mc_wilson_coverage(cases: u32) -> Result<(), String> {
    // The root of a depth-0 tree is a Bernoulli(0.3) draw.
    let s = KernelSchedule::product_bernoulli(Sequence::Constant(0.5), Sequence::Constant(0.5))
        .unwrap()
        .with_initial_law(0.3)
        .unwrap();
    run(cases, any::<u64>(), move |base| {
        let meta = 200u64;
        let mut covered = 0;
        for i in 0..meta {
            let r = mc_probability(&s, 0, Event::RootSurvival, 200, trial_seed(base, i)).unwrap();
            check_result(&r)?;
            covered += (r.interval.0 <= 0.3 && 0.3 <= r.interval.1) as u64;
        }
        ensure(covered as f64 / meta as f64 >= 0.95, || format!("coverage {covered}/{meta}"))
    })
}

// ---------------------------------------------------------------------------
// io

pub fn io_tree_round_trip(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, MAX_DEPTH), |m| {
        let t = tree(&m);
        let bytes = format::encode_tree(&t);
        let back = format::decode_tree(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(back == t, || "decoded tree differs".into())?;
        ensure(format::encode_tree(&back) == bytes, || "rewrite differs".into())
    })
}

pub fn io_path_round_trip(cases: u32) -> Result<(), String> {
    run(cases, arb_model(0, 6), |m| {
        let c = coefficients(&tree(&m), m.h_low, m.h_high).unwrap();
        let p = synthesize(&c, Wavelet::Meyer, m.depth + 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prov = format::Provenance {
            config_fingerprint: "00".into(),
            schedule_fingerprint: treewave::config::hex(&m.s.fingerprint()),
            seed: m.seed,
            command: "synth".into(),
        };
        let read_all = |d: &std::path::Path| -> Vec<Vec<u8>> {
            ["path.json", "path.f64", "path.csv"].iter().map(|f| std::fs::read(d.join(f)).unwrap()).collect()
        };
        format::write_path(dir.path(), "path", &p, prov.clone(), true).unwrap();
        let first = read_all(dir.path());
        let back = format::read_path(&dir.path().join("path.json")).unwrap();
        ensure(back.values.iter().zip(&p.values).all(|(a, b)| a.to_bits() == b.to_bits()), || "values".into())?;
        let again = tempfile::tempdir().unwrap();
        format::write_path(again.path(), "path", &back, prov.clone(), true).unwrap();
        ensure(read_all(again.path()) == first, || "rewrite differs".into())?;
        let csv = format::decode_csv(std::str::from_utf8(&first[2]).unwrap()).unwrap();
        ensure(csv.iter().zip(&p.values).all(|(a, b)| a.to_bits() == b.to_bits()), || "csv values".into())
    })
}

pub fn io_json_round_trip(cases: u32) -> Result<(), String> {
    run(cases, arb_model(2, 30), |m| {
        let Ok(p) = DerivedParams::compute(&m.s, m.h_low, m.h_high, m.depth) else {
            return Ok(());
        };
        let text = format::to_json_text(&p).unwrap();
        let back: DerivedParams = serde_json::from_str(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(format::to_json_text(&back).unwrap() == text, || "rewrite differs".into())?;
        let sched = format::to_json_text(&m.s).unwrap();
        let s2: KernelSchedule = serde_json::from_str(&sched).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(format::to_json_text(&s2).unwrap() == sched, || "schedule rewrite differs".into())
    })
}

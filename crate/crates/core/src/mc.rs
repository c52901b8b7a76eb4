//! Monte Carlo over independent tree replicates, with exact oracles from
//! the subtree generating-function recursions where one exists.
//!
//! Replicate `i` of a run with base seed `b` uses [`trial_seed`]`(b, i)`, so
//! a run is reproducible and any partition of `0..trials` across workers
//! gives the same counts.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::analysis::{box_dimension, BoxDimension};
use crate::kernels::KernelSchedule;
use crate::params::{expected_fresh, expected_ones, phi0, phi_gf};
use crate::stats::{wilson_interval, Moments, Z99};
use crate::tree::{sample_tree_capped, TreeError, TreeSample, VertexIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("unknown event `{0}` (known: s-empty, fresh-nonempty, root-survival, chain-absent, theta-nonempty)")]
    UnknownEvent(String),
    #[error("need at least {min} trials, got {got}")]
    TooFewTrials { got: u64, min: u64 },
    #[error("level {level} outside 0..={depth}")]
    Level { level: usize, depth: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Minimum number of trials accepted by [`mc_probability`].
pub const MIN_TRIALS: u64 = 100;

/// The closed registry of events, evaluated on a tree of depth `J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Event {
    /// `S_J = ∅`.
    SEmpty,
    /// Some fresh vertex at a level in `[from, J]`.
    FreshNonempty { from: usize },
    /// The state-1 line subtree of the root reaches level `J`.
    RootSurvival,
    /// Complement of [`Event::RootSurvival`].
    ChainAbsent,
    /// Some vertex of `S_J` ends a run of at least `⌈J/2⌉` state-1
    /// ancestors (itself included): the level-`J` cover of Θ is nonempty.
    ThetaNonempty,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::SEmpty => "s-empty",
            Event::FreshNonempty { .. } => "fresh-nonempty",
            Event::RootSurvival => "root-survival",
            Event::ChainAbsent => "chain-absent",
            Event::ThetaNonempty => "theta-nonempty",
        }
    }

    /// Parses a registry name; `fresh-nonempty` starts at level 1.
    pub fn parse(name: &str) -> Result<Event, McError> {
        Ok(match name {
            "s-empty" => Event::SEmpty,
            "fresh-nonempty" => Event::FreshNonempty { from: 1 },
            "root-survival" => Event::RootSurvival,
            "chain-absent" => Event::ChainAbsent,
            "theta-nonempty" => Event::ThetaNonempty,
            other => return Err(McError::UnknownEvent(other.into())),
        })
    }

    pub fn holds(&self, t: &TreeSample) -> bool {
        let depth = t.depth();
        match *self {
            Event::SEmpty => t.count_ones(depth) == 0,
            Event::FreshNonempty { from } => (from.max(1)..=depth).any(|j| t.count_fresh(j) > 0),
            Event::RootSurvival => t.subtree_reaches(VertexIndex::ROOT, depth),
            Event::ChainAbsent => !t.subtree_reaches(VertexIndex::ROOT, depth),
            Event::ThetaNonempty => {
                let need = theta_run(depth);
                t.theta_cover(depth).iter().any(|c| c.run_length >= need)
            }
        }
    }

    /// Exact probability at depth `J`.
    pub fn oracle(&self, s: &KernelSchedule, depth: usize) -> Option<f64> {
        let pi = s.initial_law;
        Some(match *self {
            Event::SEmpty => phi0(s, depth),
            Event::FreshNonempty { from } => 1.0 - no_fresh(s, from.max(1), depth),
            Event::RootSurvival => pi * (1.0 - line_dies(s, 0, depth)),
            Event::ChainAbsent => 1.0 - pi * (1.0 - line_dies(s, 0, depth)),
            Event::ThetaNonempty => {
                // A run of length m ending at J starts at level J − m + 1.
                let l = depth + 1 - theta_run(depth) as usize;
                1.0 - phi_gf(s, l, line_dies(s, l, depth))
            }
        })
    }
}

/// Run length required by [`Event::ThetaNonempty`].
pub fn theta_run(depth: usize) -> u32 {
    depth.div_ceil(2).max(1) as u32
}

/// Probability that the state-1 line subtree of a state-1 vertex at level
/// `from` does not reach level `to`: `g_m = ν_{1,m}(f(0)=1, f(1)=g_{m+1})`,
/// `g_to = 0`.
pub fn line_dies(s: &KernelSchedule, from: usize, to: usize) -> f64 {
    let mut g = 0.0;
    for m in (from..to).rev() {
        g = s.kernel_at(m, true).pgf_pair(1.0, g);
    }
    g
}

/// Probability of no fresh vertex at levels `from..=to`.
fn no_fresh(s: &KernelSchedule, from: usize, to: usize) -> f64 {
    let (mut f0, mut f1) = (1.0, 1.0);
    for m in (0..to).rev() {
        let k0 = s.kernel_at(m, false);
        let k1 = s.kernel_at(m, true);
        let n1 = k1.pgf_pair(f0, f1);
        let n0 = if m + 1 >= from {
            // Every state-1 child of a state-0 parent is fresh.
            k0.p00 * f0 * f0
        } else {
            k0.pgf_pair(f0, f1)
        };
        f0 = n0;
        f1 = n1;
    }
    s.initial_law * f1 + (1.0 - s.initial_law) * f0
}

/// Seed of replicate `i`: SplitMix64 of `base + i·φ`.
pub fn trial_seed(base: u64, i: u64) -> u64 {
    let mut z = base.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McResult {
    pub event: String,
    pub depth: usize,
    pub trials: u64,
    pub successes: u64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub p_hat: f64,
    /// Wilson 99% interval.
    pub interval: (f64, f64),
    pub seed: u64,
    pub oracle: Option<f64>,
}

impl McResult {
    pub fn from_counts(
        event: Event,
        s: &KernelSchedule,
        depth: usize,
        successes: u64,
        trials: u64,
        seed: u64,
    ) -> Self {
        McResult {
            event: event.name().into(),
            depth,
            trials,
            successes,
            p_hat: successes as f64 / trials as f64,
            interval: wilson_interval(successes, trials, Z99),
            seed,
            oracle: event.oracle(s, depth),
        }
    }

    /// Whether the oracle (if any) lies in the interval.
    pub fn oracle_in_interval(&self) -> Option<bool> {
        self.oracle
            .map(|p| p >= self.interval.0 - 1e-15 && p <= self.interval.1 + 1e-15)
    }
}

/// Successes of `event` over replicates `range` (a building block for
/// parallel drivers).
pub fn count_event(
    s: &KernelSchedule,
    depth: usize,
    event: Event,
    seed: u64,
    range: core::ops::Range<u64>,
    cap: usize,
) -> Result<u64, McError> {
    let mut n = 0;
    for i in range {
        let t = sample_tree_capped(s, depth, trial_seed(seed, i), cap)?;
        n += event.holds(&t) as u64;
    }
    Ok(n)
}

pub fn mc_probability(
    s: &KernelSchedule,
    depth: usize,
    event: Event,
    trials: u64,
    seed: u64,
) -> Result<McResult, McError> {
    if trials < MIN_TRIALS {
        return Err(McError::TooFewTrials {
            got: trials,
            min: MIN_TRIALS,
        });
    }
    let n = count_event(s, depth, event, seed, 0..trials, depth.max(crate::tree::DEFAULT_DEPTH_CAP))?;
    Ok(McResult::from_counts(event, s, depth, n, trials, seed))
}

/// Statistic for [`mc_moment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Statistic {
    /// `#S_j`.
    Ones,
    /// `#S̃_j`.
    Fresh,
}

impl Statistic {
    pub fn of(&self, t: &TreeSample, j: usize) -> f64 {
        match self {
            Statistic::Ones => t.count_ones(j) as f64,
            Statistic::Fresh => t.count_fresh(j) as f64,
        }
    }
    pub fn expectation(&self, s: &KernelSchedule, j: usize) -> f64 {
        match self {
            Statistic::Ones => expected_ones(s, j),
            Statistic::Fresh => expected_fresh(s, j),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MomentResult {
    pub level: usize,
    pub trials: u64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub mean: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub std_error: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub exact: f64,
}

impl MomentResult {
    /// `|mean − exact|` in standard errors (0 when both vanish).
    pub fn z_score(&self) -> f64 {
        let d = (self.mean - self.exact).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

/// Sample moments of a statistic over replicates `range`.
pub fn accumulate_moment(
    s: &KernelSchedule,
    depth: usize,
    stat: Statistic,
    j: usize,
    seed: u64,
    range: core::ops::Range<u64>,
) -> Result<Moments, McError> {
    if j > depth {
        return Err(McError::Level { level: j, depth });
    }
    let mut m = Moments::default();
    for i in range {
        let t = sample_tree_capped(s, j, trial_seed(seed, i), depth.max(crate::tree::DEFAULT_DEPTH_CAP))?;
        m.push(stat.of(&t, j));
    }
    Ok(m)
}

pub fn mc_moment(
    s: &KernelSchedule,
    depth: usize,
    stat: Statistic,
    j: usize,
    trials: u64,
    seed: u64,
) -> Result<MomentResult, McError> {
    let m = accumulate_moment(s, depth, stat, j, seed, 0..trials)?;
    Ok(MomentResult {
        level: j,
        trials,
        mean: m.mean(),
        std_error: m.std_error(),
        exact: stat.expectation(s, j),
    })
}

/// Cover counts `(j, #{u ∈ S_j : run ≥ ⌈j/2⌉})` for `j = 1..=J` on one tree.
pub fn theta_cover_counts(t: &TreeSample) -> Vec<(usize, u64)> {
    (1..=t.depth())
        .map(|j| {
            let need = theta_run(j);
            (
                j,
                t.theta_cover(j).iter().filter(|c| c.run_length >= need).count() as u64,
            )
        })
        .collect()
}

/// One replicate of [`mc_theta_dimension`]: `None` when the replicate did
/// not survive (empty level-`J` cover).
pub fn theta_replicate(t: &TreeSample) -> Option<BoxDimension> {
    let counts = theta_cover_counts(t);
    if counts.last().is_none_or(|c| c.1 == 0) {
        return None;
    }
    box_dimension(&counts).ok()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThetaDimensionResult {
    pub depth: usize,
    pub trials: u64,
    pub survivors: u64,
    pub survival: McResult,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float::vec"))]
    pub slopes: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub mean_slope: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub slope_std_error: f64,
}

impl ThetaDimensionResult {
    pub fn from_replicates(
        s: &KernelSchedule,
        depth: usize,
        seed: u64,
        reps: &[Option<BoxDimension>],
    ) -> Self {
        let slopes: Vec<f64> = reps.iter().flatten().map(|d| d.slope).collect();
        let mut m = Moments::default();
        for &x in &slopes {
            m.push(x);
        }
        let trials = reps.len() as u64;
        let survivors = slopes.len() as u64;
        ThetaDimensionResult {
            depth,
            trials,
            survivors,
            survival: McResult::from_counts(Event::ThetaNonempty, s, depth, survivors, trials, seed),
            mean_slope: m.mean(),
            slope_std_error: m.std_error(),
            slopes,
        }
    }
}

/// Regresses the Θ cover counts of every surviving replicate.
pub fn mc_theta_dimension(
    s: &KernelSchedule,
    depth: usize,
    trials: u64,
    seed: u64,
) -> Result<ThetaDimensionResult, McError> {
    let mut reps = Vec::with_capacity(trials as usize);
    for i in 0..trials {
        let t = sample_tree_capped(s, depth, trial_seed(seed, i), depth.max(crate::tree::DEFAULT_DEPTH_CAP))?;
        reps.push(theta_replicate(&t));
    }
    Ok(ThetaDimensionResult::from_replicates(s, depth, seed, &reps))
}

//! Rayon drivers over the sequential core routines.
//!
//! Every result is independent of the thread count: trees use the
//! counter-based stream layout, and Monte Carlo work is split into fixed
//! chunks that are merged in index order.

use rayon::prelude::*;
use treewave_core::analysis::{HolderEstimator, HolderField};
use treewave_core::mc::{
    accumulate_moment, count_event, theta_replicate, trial_seed, Event, McError, McResult, MomentResult,
    Statistic, ThetaDimensionResult, MIN_TRIALS,
};
use treewave_core::stats::Moments;
use treewave_core::tree::{fill_children, sample_root, sample_tree_capped, words_for_level, TreeError};
use treewave_core::{KernelSchedule, TreeSample};

/// Parent words handed to one task.
const PARENT_CHUNK_WORDS: usize = 64;
/// Monte Carlo replicates per task.
const TRIAL_CHUNK: u64 = 64;

/// Parallel equivalent of `sample_tree_capped`, bit-identical to it.
pub fn sample_tree_par(s: &KernelSchedule, depth: usize, seed: u64, cap: usize) -> Result<TreeSample, TreeError> {
    if depth > cap {
        return Err(TreeError::DepthCap { depth, cap });
    }
    let mut levels: Vec<Vec<u64>> = Vec::with_capacity(depth + 1);
    levels.push(vec![sample_root(s, seed) as u64]);
    for j in 0..depth {
        let pw = words_for_level(j);
        let mut next = vec![0u64; words_for_level(j + 1)];
        let parents = &levels[j];
        if pw <= PARENT_CHUNK_WORDS || j < 6 {
            fill_children(s, seed, j, parents, 0, pw, &mut next);
        } else {
            next.par_chunks_mut(2 * PARENT_CHUNK_WORDS)
                .enumerate()
                .for_each(|(c, out)| {
                    let w0 = c * PARENT_CHUNK_WORDS;
                    let w1 = (w0 + PARENT_CHUNK_WORDS).min(pw);
                    fill_children(s, seed, j, parents, w0, w1, out);
                });
        }
        levels.push(next);
    }
    TreeSample::from_parts(depth, seed, s.fingerprint(), levels)
}

/// Parallel equivalent of `analysis::holder_field`.
pub fn holder_field_par(est: &HolderEstimator<'_>, grid_exp: usize) -> HolderField {
    let n = 1usize << grid_exp;
    let step = 1.0 / n as f64;
    let estimates = (0..n).into_par_iter().map(|i| est.estimate(i as f64 * step)).collect();
    HolderField::from_estimates(est, grid_exp, estimates)
}

fn chunks(trials: u64) -> Vec<std::ops::Range<u64>> {
    (0..trials.div_ceil(TRIAL_CHUNK))
        .map(|c| c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(trials))
        .collect()
}

/// Parallel `mc::mc_probability`.
pub fn mc_probability_par(
    s: &KernelSchedule,
    depth: usize,
    event: Event,
    trials: u64,
    seed: u64,
    cap: usize,
) -> Result<McResult, McError> {
    if trials < MIN_TRIALS {
        return Err(McError::TooFewTrials {
            got: trials,
            min: MIN_TRIALS,
        });
    }
    let counts: Result<Vec<u64>, McError> = chunks(trials)
        .into_par_iter()
        .map(|r| count_event(s, depth, event, seed, r, cap))
        .collect();
    let n = counts?.iter().sum();
    Ok(McResult::from_counts(event, s, depth, n, trials, seed))
}

/// Parallel `mc::mc_moment`.
pub fn mc_moment_par(
    s: &KernelSchedule,
    depth: usize,
    stat: Statistic,
    j: usize,
    trials: u64,
    seed: u64,
) -> Result<MomentResult, McError> {
    let parts: Result<Vec<Moments>, McError> = chunks(trials)
        .into_par_iter()
        .map(|r| accumulate_moment(s, depth, stat, j, seed, r))
        .collect();
    let mut m = Moments::default();
    for p in parts? {
        m.merge(&p);
    }
    Ok(MomentResult {
        level: j,
        trials,
        mean: m.mean(),
        std_error: m.std_error(),
        exact: stat.expectation(s, j),
    })
}

/// Parallel `mc::mc_theta_dimension`.
pub fn mc_theta_dimension_par(
    s: &KernelSchedule,
    depth: usize,
    trials: u64,
    seed: u64,
    cap: usize,
) -> Result<ThetaDimensionResult, McError> {
    let reps: Result<Vec<_>, TreeError> = (0..trials)
        .into_par_iter()
        .map(|i| sample_tree_capped(s, depth, trial_seed(seed, i), cap).map(|t| theta_replicate(&t)))
        .collect();
    Ok(ThetaDimensionResult::from_replicates(s, depth, seed, &reps?))
}

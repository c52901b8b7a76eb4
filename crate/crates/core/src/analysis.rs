//! Finite-depth estimators: pointwise Hölder exponents from the large
//! coefficients, limsup-set membership, box counting, iso-Hölder level sets
//! and the nested-interval construction of a point with prescribed exponent.
//!
//! Throughout, "infinitely many levels" is replaced by a window
//! `[j_min, J]` (default `j_min = ⌈J/2⌉`), and `x_u = k 2^{-j}` is the left
//! endpoint of vertex `u = (j, k)`. Distances are taken on the torus.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::float::{ceil, exp2, floor, log2};
use crate::kernels::KernelSchedule;
use crate::params::eta;
use crate::stats::{least_squares, LineFit};
use crate::synth::CoefficientField;
use crate::tree::{TreeSample, VertexIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("estimator window [{j_min}, {depth}] is invalid (need 1 ≤ j_min ≤ depth ≤ {available})")]
    Window {
        j_min: usize,
        depth: usize,
        available: usize,
    },
    #[error("α = {alpha} must exceed h_low = {h_low}")]
    Alpha { alpha: f64, h_low: f64 },
    #[error("β is undefined at x = {x}: the Hölder estimate sits at the probe ceiling")]
    UndefinedBeta { x: f64 },
    #[error("need at least {need} offsets in the t grid, got {got}")]
    TGrid { got: usize, need: usize },
    #[error("need at least {need} levels with nonzero counts, got {got}")]
    InsufficientLevels { got: usize, need: usize },
    #[error("target exponent {h} outside [{h_low}, {h_high})")]
    Target { h: f64, h_low: f64, h_high: f64 },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
}

/// Default ceiling for `ĥ` when `h̄ = ∞`, as a multiple of `ḥ`.
pub const DEFAULT_CEILING_FACTOR: f64 = 8.0;

/// `⌈J/2⌉`, at least 1.
pub fn default_j_min(depth: usize) -> usize {
    depth.div_ceil(2).max(1)
}

/// `x mod 1` in `[0, 1)`.
#[inline]
pub fn wrap01(x: f64) -> f64 {
    let r = x - floor(x);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[inline]
pub fn torus_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).abs() % 1.0;
    d.min(1.0 - d)
}

/// Nearest entry of the sorted offsets `offs` at level `j` to `x`.
fn nearest(offs: &[u64], j: usize, x: f64) -> Option<(u64, f64)> {
    if offs.is_empty() {
        return None;
    }
    let scale = exp2(-(j as f64));
    let t = x / scale;
    let i = offs.partition_point(|&k| (k as f64) < t);
    let cands = [
        offs[(i + offs.len() - 1) % offs.len()],
        offs[i % offs.len()],
    ];
    let mut best: Option<(u64, f64)> = None;
    for k in cands {
        let d = torus_distance(x, k as f64 * scale);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best
}

/// Sorted offsets of `S_j` (state 1) and `S̃_j` (state 1, father 0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSets {
    pub ones: Vec<Vec<u64>>,
    pub fresh: Vec<Vec<u64>>,
}

impl LevelSets {
    pub fn from_tree(t: &TreeSample) -> Self {
        LevelSets {
            ones: (0..=t.depth()).map(|j| t.level_ones(j)).collect(),
            fresh: (0..=t.depth()).map(|j| t.fresh_ones(j)).collect(),
        }
    }

    /// The large coefficients play the role of `S`.
    pub fn from_field(c: &CoefficientField) -> Self {
        LevelSets {
            ones: (0..=c.depth()).map(|j| c.large_offsets(j)).collect(),
            fresh: (0..=c.depth()).map(|j| c.fresh_offsets(j)).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.ones.len() - 1
    }

    fn contains(&self, j: usize, k: u64) -> bool {
        self.ones[j].binary_search(&k).is_ok()
    }
}

/// Window and ceiling of the Hölder estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HolderProbe {
    pub j_min: usize,
    pub depth: usize,
    /// Used in place of `h̄` when `h̄ = ∞`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub ceiling: f64,
}

impl HolderProbe {
    pub fn new(depth: usize, h_low: f64) -> Self {
        HolderProbe {
            j_min: default_j_min(depth),
            depth,
            ceiling: DEFAULT_CEILING_FACTOR * h_low,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HolderEstimate {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub value: f64,
    /// Vertex attaining the minimum; `None` when the cap won.
    pub witness: Option<VertexIndex>,
    /// The value is the probe ceiling standing in for `h̄ = ∞`.
    pub clamped: bool,
}

/// `ĥ(x) = min(h̄_eff, min_{j_min ≤ j ≤ J} min_{u ∈ S_j} ḥ j / (−log₂(2^{-j} + d(x, x_u))))`.
#[derive(Clone, Copy, Debug)]
pub struct HolderEstimator<'a> {
    sets: &'a LevelSets,
    h_low: f64,
    h_high: f64,
    probe: HolderProbe,
}

impl<'a> HolderEstimator<'a> {
    pub fn new(
        sets: &'a LevelSets,
        h_low: f64,
        h_high: f64,
        probe: HolderProbe,
    ) -> Result<Self, AnalysisError> {
        check_window(probe.j_min, probe.depth, sets.depth())?;
        if !(probe.ceiling > h_low) {
            return Err(AnalysisError::NonPositive {
                what: "ceiling − h_low",
                value: probe.ceiling - h_low,
            });
        }
        Ok(HolderEstimator {
            sets,
            h_low,
            h_high,
            probe,
        })
    }

    pub fn probe(&self) -> HolderProbe {
        self.probe
    }
    pub fn h_low(&self) -> f64 {
        self.h_low
    }
    pub fn h_high(&self) -> f64 {
        self.h_high
    }

    fn cap(&self) -> f64 {
        if self.h_high.is_finite() {
            self.h_high
        } else {
            self.probe.ceiling
        }
    }

    pub fn estimate(&self, x: f64) -> HolderEstimate {
        let mut best = f64::INFINITY;
        let mut witness = None;
        for j in self.probe.j_min..=self.probe.depth {
            if let Some((k, d)) = nearest(&self.sets.ones[j], j, x) {
                let arg = exp2(-(j as f64)) + d;
                if arg < 1.0 {
                    let a = self.h_low * j as f64 / -log2(arg);
                    if a < best {
                        best = a;
                        witness = Some(VertexIndex::new(j as u32, k));
                    }
                }
            }
        }
        let cap = self.cap();
        if best >= cap {
            HolderEstimate {
                value: cap,
                witness: None,
                clamped: self.h_high.is_infinite(),
            }
        } else {
            // d ≥ 0 makes every ratio at least ḥ; only rounding can dip below.
            HolderEstimate {
                value: best.max(self.h_low),
                witness,
                clamped: false,
            }
        }
    }

    /// The estimator of the field integrated to order `t`: the large set is
    /// unchanged and both exponents move up by `t`. A finite ceiling scales
    /// with `ḥ` so that unclamped points stay unclamped.
    pub fn shifted(&self, t: f64) -> HolderEstimator<'a> {
        let mut probe = self.probe;
        probe.ceiling *= (self.h_low + t) / self.h_low;
        HolderEstimator {
            sets: self.sets,
            h_low: self.h_low + t,
            h_high: self.h_high + t,
            probe,
        }
    }

    /// `β̂(x)`: least-squares slope of `t ↦ ĥ^t(x)` minus one.
    pub fn beta(&self, x: f64, t_grid: &[f64]) -> Result<f64, AnalysisError> {
        if t_grid.len() < 2 {
            return Err(AnalysisError::TGrid {
                got: t_grid.len(),
                need: 2,
            });
        }
        if self.estimate(x).clamped {
            return Err(AnalysisError::UndefinedBeta { x });
        }
        let ys: Vec<f64> = t_grid
            .iter()
            .map(|&t| self.shifted(t).estimate(x).value)
            .collect();
        Ok(least_squares(t_grid, &ys).slope - 1.0)
    }
}

fn check_window(j_min: usize, depth: usize, available: usize) -> Result<(), AnalysisError> {
    if j_min < 1 || j_min > depth || depth > available {
        return Err(AnalysisError::Window {
            j_min,
            depth,
            available,
        });
    }
    Ok(())
}

/// One-shot `ĥ(x)` on a coefficient field.
pub fn estimate_holder(
    c: &CoefficientField,
    x: f64,
    probe: HolderProbe,
) -> Result<HolderEstimate, AnalysisError> {
    let sets = LevelSets::from_field(c);
    Ok(HolderEstimator::new(&sets, c.h_low, c.h_high, probe)?.estimate(x))
}

/// Default `t` offsets for `β̂`: `{0, 0.05, 0.1}·ḥ`.
pub fn default_t_grid(h_low: f64) -> [f64; 3] {
    [0.0, 0.05 * h_low, 0.1 * h_low]
}

/// One-shot `β̂(x)` on a coefficient field.
pub fn estimate_beta(
    c: &CoefficientField,
    x: f64,
    t_grid: &[f64],
    probe: HolderProbe,
) -> Result<f64, AnalysisError> {
    let sets = LevelSets::from_field(c);
    HolderEstimator::new(&sets, c.h_low, c.h_high, probe)?.beta(x, t_grid)
}

/// `ĥ` on the grid `x_i = i 2^{-m}`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HolderField {
    pub grid_exp: usize,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_low: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_high: f64,
    pub probe: HolderProbe,
    pub estimates: Vec<HolderEstimate>,
}

impl HolderField {
    pub fn from_estimates(est: &HolderEstimator<'_>, grid_exp: usize, estimates: Vec<HolderEstimate>) -> Self {
        debug_assert_eq!(estimates.len(), 1 << grid_exp);
        HolderField {
            grid_exp,
            h_low: est.h_low,
            h_high: est.h_high,
            probe: est.probe,
            estimates,
        }
    }
    pub fn len(&self) -> usize {
        self.estimates.len()
    }
    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * exp2(-(self.grid_exp as f64))
    }
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.estimates.iter().map(|e| e.value)
    }
}

/// Sequential grid evaluation; see the `treewave` crate for a parallel one.
pub fn holder_field(est: &HolderEstimator<'_>, grid_exp: usize) -> HolderField {
    let n = 1usize << grid_exp;
    let h = exp2(-(grid_exp as f64));
    let v = (0..n).map(|i| est.estimate(i as f64 * h)).collect();
    HolderField::from_estimates(est, grid_exp, v)
}

/// Finite-depth membership in the limsup sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Membership {
    /// Some `u ∈ S` with level in the window has `d(x, x_u) < 2^{-ḥ⟨u⟩/α}`.
    pub in_l: bool,
    /// The same over fresh vertices.
    pub in_l_tilde: bool,
    /// The same over vertices joined to level `j_min − 1` by an unbroken
    /// line of state-1 ancestors.
    pub in_theta_path: bool,
    /// The dyadic ancestors of `x` are all in state 1 from `j_min − 1` to `J`.
    pub on_ancestor_chain: bool,
    /// `2^{-ḥj/α} + 2^{-j} ≤ 2^{-ḥ(j−1)/α}` on the window, which makes
    /// `in_l ⇒ in_l_tilde ∨ in_theta_path` hold by construction rather than by luck.
    pub nesting_holds: bool,
    pub consistent: bool,
}

/// Precomputed line structure for [`Membership`] queries.
#[derive(Clone, Debug)]
pub struct MembershipProbe<'a> {
    sets: &'a LevelSets,
    h_low: f64,
    j_min: usize,
    depth: usize,
    /// `lines[j − j_min]`: state-1 vertices at level `j` whose ancestors
    /// back to level `j_min − 1` are all in state 1.
    lines: Vec<Vec<u64>>,
}

impl<'a> MembershipProbe<'a> {
    pub fn new(
        sets: &'a LevelSets,
        h_low: f64,
        j_min: usize,
        depth: usize,
    ) -> Result<Self, AnalysisError> {
        check_window(j_min, depth, sets.depth())?;
        let mut lines: Vec<Vec<u64>> = Vec::with_capacity(depth - j_min + 1);
        let mut prev: &[u64] = &sets.ones[j_min - 1];
        for j in j_min..=depth {
            let cur: Vec<u64> = sets.ones[j]
                .iter()
                .copied()
                .filter(|k| prev.binary_search(&(k >> 1)).is_ok())
                .collect();
            lines.push(cur);
            prev = lines.last().unwrap();
        }
        Ok(MembershipProbe {
            sets,
            h_low,
            j_min,
            depth,
            lines,
        })
    }

    pub fn membership(&self, x: f64, alpha: f64) -> Result<Membership, AnalysisError> {
        if !(alpha > self.h_low) {
            return Err(AnalysisError::Alpha {
                alpha,
                h_low: self.h_low,
            });
        }
        let radius = |j: usize| exp2(-self.h_low * j as f64 / alpha);
        let hit = |offs: &[u64], j: usize| nearest(offs, j, x).is_some_and(|(_, d)| d < radius(j));
        let mut m = Membership {
            in_l: false,
            in_l_tilde: false,
            in_theta_path: false,
            on_ancestor_chain: true,
            nesting_holds: true,
            consistent: true,
        };
        for j in self.j_min..=self.depth {
            m.in_l |= hit(&self.sets.ones[j], j);
            m.in_l_tilde |= hit(&self.sets.fresh[j], j);
            m.in_theta_path |= hit(&self.lines[j - self.j_min], j);
            if j > self.j_min && radius(j) + exp2(-(j as f64)) > radius(j - 1) {
                m.nesting_holds = false;
            }
        }
        for j in self.j_min - 1..=self.depth {
            let k = (wrap01(x) * exp2(j as f64)) as u64;
            if !self.sets.contains(j, k.min((1u64 << j) - 1)) {
                m.on_ancestor_chain = false;
                break;
            }
        }
        m.consistent = !m.in_l || m.in_l_tilde || m.in_theta_path;
        Ok(m)
    }
}

/// One-shot membership query on a tree.
pub fn limsup_membership(
    tree: &TreeSample,
    x: f64,
    alpha: f64,
    h_low: f64,
    j_min: usize,
    depth: usize,
) -> Result<Membership, AnalysisError> {
    let sets = LevelSets::from_tree(tree);
    MembershipProbe::new(&sets, h_low, j_min, depth)?.membership(x, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxDimension {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub slope: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub r2: f64,
    pub levels_used: usize,
}

impl BoxDimension {
    fn empty() -> Self {
        BoxDimension {
            slope: f64::NEG_INFINITY,
            r2: 0.0,
            levels_used: 0,
        }
    }
}

/// Minimum number of levels with nonzero counts for [`box_dimension`].
pub const BOX_MIN_LEVELS: usize = 4;

/// Slope of `log₂(count)` against level over the upper half of the levels
/// with nonzero counts. The empty set has dimension `−∞`.
pub fn box_dimension(counts: &[(usize, u64)]) -> Result<BoxDimension, AnalysisError> {
    let mut pts: Vec<(usize, u64)> = counts.iter().copied().filter(|c| c.1 > 0).collect();
    if pts.is_empty() {
        return Ok(BoxDimension::empty());
    }
    if pts.len() < BOX_MIN_LEVELS {
        return Err(AnalysisError::InsufficientLevels {
            got: pts.len(),
            need: BOX_MIN_LEVELS,
        });
    }
    pts.sort_unstable();
    let upper = &pts[pts.len() / 2..];
    let xs: Vec<f64> = upper.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = upper.iter().map(|p| log2(p.1 as f64)).collect();
    Ok(from_fit(least_squares(&xs, &ys), upper.len()))
}

/// Slope of `log₂(count)` against the scale exponent `s` (covers by sets
/// of diameter `2^{-s}`), over every point with a nonzero count.
pub fn box_dimension_at_scales(points: &[(f64, u64)]) -> Result<BoxDimension, AnalysisError> {
    let pts: Vec<(f64, u64)> = points.iter().copied().filter(|c| c.1 > 0).collect();
    if pts.is_empty() {
        return Ok(BoxDimension::empty());
    }
    if pts.len() < 2 {
        return Err(AnalysisError::InsufficientLevels {
            got: pts.len(),
            need: 2,
        });
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| log2(p.1 as f64)).collect();
    Ok(from_fit(least_squares(&xs, &ys), pts.len()))
}

fn from_fit(f: LineFit, n: usize) -> BoxDimension {
    BoxDimension {
        slope: f.slope,
        r2: f.r2,
        levels_used: n,
    }
}

/// Counts of dyadic intervals at levels `1..=grid_exp` meeting a set of grid
/// indices (sorted, increasing).
pub fn dyadic_cover_counts(members: &[usize], grid_exp: usize) -> Vec<(usize, u64)> {
    (1..=grid_exp)
        .map(|j| {
            let shift = grid_exp - j;
            let mut n = 0u64;
            let mut last = usize::MAX;
            for &i in members {
                let b = i >> shift;
                if b != last {
                    n += 1;
                    last = b;
                }
            }
            (j, n)
        })
        .collect()
}

/// Dyadic counts of a level set of `field`, cut at the tree depth: below
/// `2^{-J}` the estimate carries no new information and every nonempty
/// piece looks one-dimensional.
// TODO: the estimate only resolves level h down to 2^{-ḥJ/h}, so grids
// finer than that still bias slopes upward (0.93 vs 0.75 on the divergent
// config at 2^24); cutting there instead leaves too few anchored levels at
// J = 20. Revisit with a two-scale fit once depth 24+ runs are affordable.
fn field_cover(field: &HolderField, members: &[usize]) -> Vec<(usize, u64)> {
    let mut c = dyadic_cover_counts(members, field.grid_exp);
    c.truncate(field.probe.depth.min(field.grid_exp));
    c
}

/// Number of distinct witness vertices per level among grid points.
fn witness_counts(field: &HolderField, members: &[usize]) -> Vec<(usize, u64)> {
    let mut w: Vec<(u32, u64)> = members
        .iter()
        .filter_map(|&i| field.estimates[i].witness.map(|v| (v.level, v.offset)))
        .collect();
    w.sort_unstable();
    w.dedup();
    (field.probe.j_min..=field.probe.depth)
        .map(|j| (j, w.iter().filter(|v| v.0 as usize == j).count() as u64))
        .collect()
}

/// How level sets are covered when estimating their dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CoverMode {
    /// Dyadic intervals at levels `1..=min(grid_exp, J)` meeting the set.
    Dyadic,
    /// One ball per distinct witness vertex `u` at level `w`, of radius
    /// `2^{-ḥ w / h}`: the cover that the limsup description of the level
    /// sets provides directly.
    Witness,
}

/// Grid level sets `Ê_h = {|ĥ − h| ≤ ε}` and `Ẽ̂_h = {ĥ ≤ h + ε}`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IsoHolderSets {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub eps: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_low: f64,
    pub grid_exp: usize,
    /// Grid indices of `Ê_h`.
    pub exact: Vec<usize>,
    /// Grid indices of `Ẽ̂_h`.
    pub sub: Vec<usize>,
    pub exact_cover: Vec<(usize, u64)>,
    pub sub_cover: Vec<(usize, u64)>,
    pub exact_witnesses: Vec<(usize, u64)>,
    pub sub_witnesses: Vec<(usize, u64)>,
}

impl IsoHolderSets {
    pub fn exact_fraction(&self) -> f64 {
        self.exact.len() as f64 / exp2(self.grid_exp as f64)
    }
    pub fn sub_fraction(&self) -> f64 {
        self.sub.len() as f64 / exp2(self.grid_exp as f64)
    }

    /// Witness counts re-indexed by scale exponent `ḥ w / h`.
    pub fn witness_scales(&self, counts: &[(usize, u64)]) -> Vec<(f64, u64)> {
        witness_scales(counts, self.h_low, self.h)
    }

    pub fn exact_dimension(&self, mode: CoverMode) -> Result<BoxDimension, AnalysisError> {
        match mode {
            CoverMode::Dyadic => box_dimension(&self.exact_cover),
            CoverMode::Witness => box_dimension_at_scales(&self.witness_scales(&self.exact_witnesses)),
        }
    }
    pub fn sub_dimension(&self, mode: CoverMode) -> Result<BoxDimension, AnalysisError> {
        match mode {
            CoverMode::Dyadic => box_dimension(&self.sub_cover),
            CoverMode::Witness => box_dimension_at_scales(&self.witness_scales(&self.sub_witnesses)),
        }
    }
}

fn witness_scales(counts: &[(usize, u64)], h_low: f64, h: f64) -> Vec<(f64, u64)> {
    counts
        .iter()
        .map(|&(w, n)| (h_low * w as f64 / h, n))
        .collect()
}

pub fn iso_holder_sets(field: &HolderField, h: f64, eps: f64) -> Result<IsoHolderSets, AnalysisError> {
    if !(eps > 0.0) {
        return Err(AnalysisError::NonPositive { what: "ε", value: eps });
    }
    let mut exact = Vec::new();
    let mut sub = Vec::new();
    for (i, e) in field.estimates.iter().enumerate() {
        if (e.value - h).abs() <= eps {
            exact.push(i);
        }
        if e.value <= h + eps {
            sub.push(i);
        }
    }
    Ok(IsoHolderSets {
        h,
        eps,
        h_low: field.h_low,
        grid_exp: field.grid_exp,
        exact_cover: field_cover(field, &exact),
        sub_cover: field_cover(field, &sub),
        exact_witnesses: witness_counts(field, &exact),
        sub_witnesses: witness_counts(field, &sub),
        exact,
        sub,
    })
}

/// Per-arc dimension estimates of `Ẽ̂_h`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalityReport {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float::vec"))]
    pub slopes: Vec<f64>,
    /// `max − min` over arcs with a finite slope.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub spread: f64,
    /// Arcs whose slope is `−∞` or could not be fitted.
    pub excluded: Vec<usize>,
    pub notes: Vec<String>,
}

pub fn locality_check(
    field: &HolderField,
    h: f64,
    eps: f64,
    n_arcs: usize,
    mode: CoverMode,
) -> Result<LocalityReport, AnalysisError> {
    if n_arcs < 2 {
        return Err(AnalysisError::NonPositive {
            what: "number of arcs − 1",
            value: n_arcs as f64 - 1.0,
        });
    }
    let sets = iso_holder_sets(field, h, eps)?;
    let n = field.len();
    let mut slopes = Vec::with_capacity(n_arcs);
    let mut excluded = Vec::new();
    let mut notes = Vec::new();
    for a in 0..n_arcs {
        let (lo, hi) = (a * n / n_arcs, (a + 1) * n / n_arcs);
        let members: Vec<usize> = sets.sub.iter().copied().filter(|&i| i >= lo && i < hi).collect();
        let dim = match mode {
            CoverMode::Dyadic => box_dimension(&field_cover(field, &members)),
            CoverMode::Witness => box_dimension_at_scales(&witness_scales(
                &witness_counts(field, &members),
                field.h_low,
                h,
            )),
        };
        let s = match dim {
            Ok(d) => d.slope,
            Err(e) => {
                notes.push(alloc::format!("arc {a}: {e}"));
                f64::NAN
            }
        };
        if !s.is_finite() {
            excluded.push(a);
            if s == f64::NEG_INFINITY {
                notes.push(alloc::format!("arc {a}: empty intersection"));
            }
        }
        slopes.push(s);
    }
    let finite: Vec<f64> = slopes.iter().copied().filter(|s| s.is_finite()).collect();
    let spread = if finite.is_empty() {
        f64::NAN
    } else {
        let mx = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = finite.iter().copied().fold(f64::INFINITY, f64::min);
        mx - mn
    };
    Ok(LocalityReport {
        slopes,
        spread,
        excluded,
        notes,
    })
}

// ---------------------------------------------------------------------------
// Nested-interval construction.

/// `ρ^h_j = j 2^{ḥj/h} Σ_{j' > j} 2^{(1−ḥ/h) j'} η_{j'−1} j'²`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RhoValue {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub value: f64,
    /// Contribution of the terms beyond the sampled depth.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub beyond_depth: f64,
    /// Estimated remainder after the last summed term (geometric
    /// extrapolation); `+∞` when the terms do not decrease.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub remainder: f64,
}

impl RhoValue {
    /// Remainder small against the summed value.
    pub fn resolved(&self) -> bool {
        self.remainder <= 0.1 * self.value || self.value == 0.0 && self.remainder == 0.0
    }
}

/// Terms summed past the sampled depth when evaluating `ρ^h_j`.
pub const RHO_EXTRA_TERMS: usize = 256;

pub fn rho(s: &KernelSchedule, h_low: f64, h: f64, j: usize, depth: usize) -> RhoValue {
    let r = h_low / h;
    let term = |jp: usize| {
        let e = eta(s, jp - 1);
        if e == 0.0 {
            0.0
        } else {
            let jf = jp as f64;
            exp2((1.0 - r) * jf + log2(e) + 2.0 * log2(jf) + r * j as f64)
        }
    };
    let last = depth.max(j) + RHO_EXTRA_TERMS;
    let mut total = 0.0;
    let mut beyond = 0.0;
    let (mut prev, mut cur) = (0.0, 0.0);
    for jp in j + 1..=last {
        let t = term(jp);
        total += t;
        if jp > depth {
            beyond += t;
        }
        prev = cur;
        cur = t;
    }
    let remainder = if cur == 0.0 {
        0.0
    } else if prev > 0.0 && cur < prev {
        let q = cur / prev;
        cur * q / (1.0 - q)
    } else {
        f64::INFINITY
    };
    let jf = j as f64;
    RhoValue {
        value: jf * total,
        beyond_depth: jf * beyond,
        remainder: jf * remainder,
    }
}

/// Knobs of the finite-depth construction.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstructionOptions {
    /// Interval lengths are `min(ρ^h_j, rho_cap)·2^{-ḥj/h}`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub rho_cap: f64,
    /// Lower bound for the starting level.
    pub j0_min: usize,
    /// Budget for the fraction of the torus covered by the excluded balls
    /// from the starting level on.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub coverage: f64,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        ConstructionOptions {
            rho_cap: 0.25,
            j0_min: 4,
            coverage: 0.25,
        }
    }
}

impl ConstructionOptions {
    /// Defaults, but never starting before `window_start`. Starting at the
    /// first level the Hölder estimator reads keeps the point's measured
    /// exponent controlled by the construction rather than by what happened
    /// above it.
    pub fn for_window(window_start: usize) -> Self {
        let d = Self::default();
        ConstructionOptions {
            j0_min: d.j0_min.max(window_start),
            ..d
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ConstructionStatus {
    /// Every level up to `J` was processed; the last interval avoids every
    /// excluded ball.
    LevelsExhausted,
    /// No fresh vertex at levels `j0..=J`: the first interval cannot be
    /// anchored.
    FreshVertexExhaustion,
    /// Balls met the current interval but no complementary component was
    /// wide enough before `J`.
    WidthExhaustion,
    /// No starting level satisfies the coverage budget.
    NoStartingLevel,
    /// `ρ^h_j` could not be summed (the series does not visibly converge).
    UnderResolved,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstructionStep {
    /// `j^h_n`.
    pub level: usize,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub rho: f64,
    /// Left end on the real line (reduce mod 1 for the torus).
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub start: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub length: f64,
    /// Vertex whose excluded ball the interval is flush against.
    pub anchor: Option<VertexIndex>,
}

impl ConstructionStep {
    pub fn end(&self) -> f64 {
        self.start + self.length
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointConstruction {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h: f64,
    /// θ ≥ 0: the first step also avoids the enlarged balls of `S_{j0−1}`.
    pub theta_branch: bool,
    pub j0: Option<usize>,
    pub rho_j0: Option<RhoValue>,
    pub steps: Vec<ConstructionStep>,
    /// Midpoint of the last interval, in `[0, 1)`.
    pub y: Option<f64>,
    pub status: ConstructionStatus,
    /// Deepest level through which the last interval is known to avoid
    /// every excluded ball.
    pub depth_reached: usize,
}

/// An excluded open ball `(center − radius, center + radius)` on the line.
#[derive(Clone, Copy, Debug)]
struct Ball {
    center: f64,
    radius: f64,
    owner: VertexIndex,
}

impl Ball {
    fn lo(&self) -> f64 {
        self.center - self.radius
    }
    fn hi(&self) -> f64 {
        self.center + self.radius
    }
}

/// A free component and the ball (if any) bounding it on each side.
#[derive(Clone, Copy, Debug)]
struct Gap {
    lo: f64,
    hi: f64,
    left: Option<VertexIndex>,
    right: Option<VertexIndex>,
}

/// Complement of open balls inside `[a, b]`.
fn gaps_in(a: f64, b: f64, balls: &mut [Ball]) -> Vec<Gap> {
    balls.sort_by(|x, y| x.lo().total_cmp(&y.lo()));
    let mut out = Vec::new();
    let mut cur = a;
    let mut left = None;
    for bl in balls.iter() {
        if bl.hi() <= cur {
            continue;
        }
        if bl.lo() > cur {
            out.push(Gap {
                lo: cur,
                hi: bl.lo().min(b),
                left,
                right: Some(bl.owner),
            });
        }
        if bl.hi() > cur {
            cur = bl.hi();
            left = Some(bl.owner);
        }
        if cur >= b {
            break;
        }
    }
    if cur < b {
        out.push(Gap {
            lo: cur,
            hi: b,
            left,
            right: None,
        });
    }
    out
}

/// Complement of open balls on the circle, as gaps on the line starting at
/// the right edge of the leftmost-ending ball.
fn gaps_on_circle(balls: &[Ball]) -> Vec<Gap> {
    if balls.is_empty() {
        return Vec::new();
    }
    // Cut the circle at the lowest left edge: everything becomes an
    // interval problem on [cut, cut + 1] with the cutting ball repeated.
    let first = *balls
        .iter()
        .min_by(|x, y| x.lo().total_cmp(&y.lo()))
        .unwrap();
    let cut = first.lo();
    let mut shifted: Vec<Ball> = balls
        .iter()
        .map(|bl| {
            let mut c = bl.center;
            while c - bl.radius < cut {
                c += 1.0;
            }
            while c - bl.radius >= cut + 1.0 {
                c -= 1.0;
            }
            Ball { center: c, ..*bl }
        })
        .collect();
    shifted.push(Ball {
        center: first.center + 1.0,
        ..first
    });
    gaps_in(cut, cut + 1.0, &mut shifted)
        .into_iter()
        .filter(|g| g.left.is_some() && g.right.is_some())
        .collect()
}

/// Picks the placement of a length-`len` interval: widest admissible gap
/// (ties to the left), flush to the right of its left ball when there is
/// one, else flush to the left of its right ball.
fn place(gaps: &[Gap], len: f64) -> Option<(f64, Option<VertexIndex>)> {
    let mut best: Option<&Gap> = None;
    for g in gaps {
        let w = g.hi - g.lo;
        if w < len || (g.left.is_none() && g.right.is_none()) {
            continue;
        }
        if best.is_none_or(|b| w > b.hi - b.lo) {
            best = Some(g);
        }
    }
    let g = best?;
    if g.left.is_some() {
        Some((g.lo, g.left))
    } else {
        Some((g.hi - len, g.right))
    }
}

/// Balls of fresh vertices at level `j` whose interior meets `(a, b)`,
/// with centers moved to the copy nearest the interval.
fn fresh_balls_meeting(sets: &LevelSets, j: usize, radius: f64, a: f64, b: f64, out: &mut Vec<Ball>) {
    let offs = &sets.fresh[j];
    if offs.is_empty() {
        return;
    }
    let n = exp2(j as f64);
    let lo = a - radius;
    let hi = b + radius;
    // Centers in (lo, hi) modulo 1: at most two ranges of offsets.
    let base = floor(lo);
    for shift in [base, base + 1.0] {
        let from = floor((lo - shift) * n).max(0.0) as u64;
        let to = ceil((hi - shift) * n).min(n) as u64;
        if from >= to {
            continue;
        }
        let i0 = offs.partition_point(|&k| k < from);
        let i1 = offs.partition_point(|&k| k < to);
        for &k in &offs[i0..i1] {
            let c = shift + k as f64 / n;
            if c + radius > a && c - radius < b {
                out.push(Ball {
                    center: c,
                    radius,
                    owner: VertexIndex::new(j as u32, k),
                });
            }
        }
    }
}

/// Finite-depth construction of a point whose exponent should be `h`:
/// nested intervals sitting just outside the balls `B(x_u, 2^{-ḥ⟨u⟩/h})`
/// of fresh vertices `u`.
///
/// The almost-sure constants of the asymptotic argument are replaced by the
/// realized tree: the starting level `j0` is the first level (at least
/// `j0_min`) from which the excluded balls cover at most `coverage` of the
/// torus, and the interval lengths are capped by `rho_cap·2^{-ḥj/h}`.
pub fn construct_point(
    tree: &TreeSample,
    s: &KernelSchedule,
    h_low: f64,
    h_high: f64,
    theta: f64,
    h: f64,
    opts: ConstructionOptions,
) -> Result<PointConstruction, AnalysisError> {
    construct_point_on(&LevelSets::from_tree(tree), s, h_low, h_high, theta, h, opts)
}

pub fn construct_point_on(
    sets: &LevelSets,
    s: &KernelSchedule,
    h_low: f64,
    h_high: f64,
    theta: f64,
    h: f64,
    opts: ConstructionOptions,
) -> Result<PointConstruction, AnalysisError> {
    if !(h >= h_low && h < h_high) {
        return Err(AnalysisError::Target { h, h_low, h_high });
    }
    if !(opts.rho_cap > 0.0) {
        return Err(AnalysisError::NonPositive {
            what: "rho_cap",
            value: opts.rho_cap,
        });
    }
    let depth = sets.depth();
    let theta_branch = theta >= 0.0;
    let radius = |j: usize| exp2(-h_low * j as f64 / h);
    let mut out = PointConstruction {
        h,
        theta_branch,
        j0: None,
        rho_j0: None,
        steps: Vec::new(),
        y: None,
        status: ConstructionStatus::FreshVertexExhaustion,
        depth_reached: 0,
    };
    let j0_min = opts.j0_min.max(1);
    if j0_min > depth || (j0_min..=depth).all(|j| sets.fresh[j].is_empty()) {
        return Ok(out);
    }

    // Starting level from the realized coverage.
    let mut suffix = vec![0.0; depth + 2];
    for j in (1..=depth).rev() {
        suffix[j] = suffix[j + 1] + sets.fresh[j].len() as f64 * 2.0 * radius(j);
    }
    let enlarged = |j0: usize| {
        if theta_branch {
            3.0 * sets.ones[j0 - 1].len() as f64 * exp2(-((j0 - 1) as f64))
        } else {
            0.0
        }
    };
    let Some(j0) = (j0_min..=depth).find(|&j0| suffix[j0] + enlarged(j0) <= opts.coverage) else {
        out.status = ConstructionStatus::NoStartingLevel;
        return Ok(out);
    };
    out.j0 = Some(j0);
    let rhos: Vec<RhoValue> = (0..=depth).map(|j| rho(s, h_low, h, j, depth)).collect();
    out.rho_j0 = Some(rhos[j0]);
    if !rhos[j0].resolved() {
        out.status = ConstructionStatus::UnderResolved;
        return Ok(out);
    }
    let target = |j: usize| rhos[j].value.min(opts.rho_cap) * radius(j);

    // Step 1 on the whole circle.
    let mut balls: Vec<Ball> = Vec::new();
    if theta_branch {
        let r = 3.0 * exp2(-(j0 as f64));
        for &k in &sets.ones[j0 - 1] {
            balls.push(Ball {
                center: k as f64 * exp2(-((j0 - 1) as f64)),
                radius: r,
                owner: VertexIndex::new((j0 - 1) as u32, k),
            });
        }
    }
    let mut any_fresh = false;
    let mut current: Option<ConstructionStep> = None;
    let mut j = j0;
    while j <= depth {
        let r = radius(j);
        let n = exp2(j as f64);
        for &k in &sets.fresh[j] {
            any_fresh = true;
            balls.push(Ball {
                center: k as f64 / n,
                radius: r,
                owner: VertexIndex::new(j as u32, k),
            });
        }
        if any_fresh {
            let len = target(j);
            if len > 0.0 {
                if let Some((start, anchor)) = place(&gaps_on_circle(&balls), len) {
                    current = Some(ConstructionStep {
                        level: j,
                        rho: rhos[j].value,
                        start,
                        length: len,
                        anchor,
                    });
                    break;
                }
            }
        }
        j += 1;
    }
    let Some(mut cur) = current else {
        out.status = if any_fresh {
            ConstructionStatus::WidthExhaustion
        } else {
            ConstructionStatus::FreshVertexExhaustion
        };
        out.depth_reached = j0.saturating_sub(1);
        return Ok(out);
    };
    out.steps.push(cur);

    // Steps n + 1.
    let mut pending: Vec<Ball> = Vec::new();
    let mut first_pending = None;
    let mut j = cur.level + 1;
    while j <= depth {
        let before = pending.len();
        fresh_balls_meeting(sets, j, radius(j), cur.start, cur.end(), &mut pending);
        if pending.len() > before && first_pending.is_none() {
            first_pending = Some(j);
        }
        if !pending.is_empty() {
            let len = target(j).min(cur.length);
            if len > 0.0 {
                let gaps = gaps_in(cur.start, cur.end(), &mut pending);
                if let Some((start, anchor)) = place(&gaps, len) {
                    if len < cur.length {
                        cur = ConstructionStep {
                            level: j,
                            rho: rhos[j].value,
                            start,
                            length: len,
                            anchor,
                        };
                        out.steps.push(cur);
                        pending.clear();
                        first_pending = None;
                    }
                }
            }
        }
        j += 1;
    }
    let y = wrap01(cur.start + cur.length / 2.0);
    out.y = Some(y);
    if let Some(fp) = first_pending {
        out.status = ConstructionStatus::WidthExhaustion;
        out.depth_reached = fp - 1;
    } else {
        out.status = ConstructionStatus::LevelsExhausted;
        out.depth_reached = depth;
    }
    Ok(out)
}

/// Checks the structural invariants of a construction: strict nesting,
/// strictly decreasing lengths bounded by `ρ 2^{-ḥ j/h}`, and no overlap
/// between each interval and the open balls examined at its step. Returns a
/// description of the first violation.
pub fn check_construction(
    c: &PointConstruction,
    sets: &LevelSets,
    h_low: f64,
) -> Result<(), String> {
    let radius = |j: usize| exp2(-h_low * j as f64 / c.h);
    let tol = 1e-12;
    let mut prev_level = c.j0.map_or(0, |j| j.saturating_sub(1));
    for (n, st) in c.steps.iter().enumerate() {
        if st.length > st.rho * radius(st.level) * (1.0 + tol) {
            return Err(alloc::format!("step {n}: length above ρ 2^(-ḥj/h)"));
        }
        if n > 0 {
            let p = &c.steps[n - 1];
            if !(st.length < p.length) {
                return Err(alloc::format!("step {n}: length not decreasing"));
            }
            if st.start < p.start - tol || st.end() > p.end() + tol {
                return Err(alloc::format!("step {n}: not nested"));
            }
        }
        let from = if n == 0 { c.j0.unwrap_or(1) } else { prev_level + 1 };
        for j in from..=st.level {
            let mut balls = Vec::new();
            fresh_balls_meeting(sets, j, radius(j), st.start, st.end(), &mut balls);
            if let Some(b) = balls.iter().find(|b| b.lo() < st.end() - tol && b.hi() > st.start + tol) {
                return Err(alloc::format!(
                    "step {n}: meets the ball of ({}, {})",
                    b.owner.level,
                    b.owner.offset
                ));
            }
        }
        prev_level = st.level;
    }
    Ok(())
}

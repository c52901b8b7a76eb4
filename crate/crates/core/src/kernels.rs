//! Child-pair distributions and their level schedules.
//!
//! A vertex in state `x` at level `j` draws the states of its two children
//! jointly from `ν_{x,j}`, a distribution on `{0,1}²`. Entries are stored
//! in the order `(left, right)`: `p01` is the probability that the left
//! child is 0 and the right child is 1.

use alloc::vec::Vec;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::float::{exp2, log2, powf};

/// Tolerance on the total mass of a pair distribution.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Why a pair distribution was rejected.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RowFailure {
    #[error("entry p{index:02b} = {value} is outside [0, 1]")]
    OutOfRange { index: u8, value: f64 },
    #[error("entries sum to {sum}, expected 1 within 1e-12")]
    BadSum { sum: f64 },
    #[error("entry is not a finite number")]
    NotFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("level {level}, parent state {state}: {failure}")]
    InvalidRow {
        level: usize,
        state: u8,
        failure: RowFailure,
    },
    #[error("invalid pair distribution: {0}")]
    InvalidPair(RowFailure),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("table has no row for parent state {state} at level {level} or below")]
    MissingRow { level: usize, state: u8 },
}

/// A probability distribution on the four child configurations.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairDistribution {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl PairDistribution {
    /// Checked constructor: entries in `[0,1]`, total mass 1 within
    /// [`ROW_TOLERANCE`].
    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<Self, KernelError> {
        let d = PairDistribution { p00, p01, p10, p11 };
        d.check().map_err(KernelError::InvalidPair)?;
        Ok(d)
    }

    /// Both children independently in state 1 with probability `p`.
    pub fn product_bernoulli(p: f64) -> Self {
        let q = 1.0 - p;
        PairDistribution {
            p00: q * q,
            p01: q * p,
            p10: p * q,
            p11: p * p,
        }
    }

    /// Point mass on `(left, right)`.
    pub fn point(left: bool, right: bool) -> Self {
        let mut d = PairDistribution {
            p00: 0.0,
            p01: 0.0,
            p10: 0.0,
            p11: 0.0,
        };
        match (left, right) {
            (false, false) => d.p00 = 1.0,
            (false, true) => d.p01 = 1.0,
            (true, false) => d.p10 = 1.0,
            (true, true) => d.p11 = 1.0,
        }
        d
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p00, self.p01, self.p10, self.p11]
    }

    pub fn check(&self) -> Result<(), RowFailure> {
        let a = self.as_array();
        for (i, &v) in a.iter().enumerate() {
            if !v.is_finite() {
                return Err(RowFailure::NotFinite);
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(RowFailure::OutOfRange {
                    index: i as u8,
                    value: v,
                });
            }
        }
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(RowFailure::BadSum { sum });
        }
        Ok(())
    }

    /// Expected number of children in state 1.
    pub fn mean_ones(&self) -> f64 {
        2.0 * self.p11 + self.p01 + self.p10
    }

    /// Probability that at least one child is in state 1 (summed directly
    /// so that tiny values survive).
    pub fn any_one(&self) -> f64 {
        self.p01 + self.p10 + self.p11
    }

    /// The outcome if the distribution is a point mass.
    pub fn degenerate(&self) -> Option<(bool, bool)> {
        let a = self.as_array();
        let mut hit = None;
        for (i, &v) in a.iter().enumerate() {
            if v == 1.0 {
                hit = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hit.map(|i| (i & 2 != 0, i & 1 != 0))
    }

    /// Inverse-CDF draw in the fixed order 00, 01, 10, 11.
    #[inline]
    pub fn sample(&self, u: f64) -> (bool, bool) {
        let mut c = self.p00;
        if u < c {
            return (false, false);
        }
        c += self.p01;
        if u < c {
            return (false, true);
        }
        c += self.p10;
        if u < c {
            return (true, false);
        }
        (true, true)
    }

    /// Probability generating function `E[a^{X_left} b^{X_right}]`.
    #[inline]
    pub fn pgf(&self, a: f64, b: f64) -> f64 {
        self.p00 + self.p01 * b + self.p10 * a + self.p11 * a * b
    }
}

/// A level-indexed sequence of probabilities in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Sequence {
    Constant(f64),
    /// Explicit values; the last one repeats.
    Table(Vec<f64>),
    /// `min(1, scale · (j+1)^poly · 2^{-rate·j})`.
    Geometric { scale: f64, rate: f64, poly: f64 },
}

impl Sequence {
    pub fn value(&self, j: usize) -> f64 {
        match self {
            Sequence::Constant(v) => *v,
            Sequence::Table(t) => t[j.min(t.len() - 1)],
            Sequence::Geometric { scale, rate, poly } => {
                if *scale == 0.0 {
                    return 0.0;
                }
                let v = scale * powf((j + 1) as f64, *poly) * exp2(-rate * j as f64);
                v.min(1.0)
            }
        }
    }

    fn validate(&self, name: &'static str) -> Result<(), KernelError> {
        let bad = |reason| Err(KernelError::InvalidParameter { name, reason });
        match self {
            Sequence::Constant(v) => {
                if !(0.0..=1.0).contains(v) {
                    return bad("probability outside [0, 1]");
                }
            }
            Sequence::Table(t) => {
                if t.is_empty() {
                    return bad("table is empty");
                }
                if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad("probability outside [0, 1]");
                }
            }
            Sequence::Geometric { scale, rate, poly } => {
                if !(scale.is_finite() && *scale >= 0.0) {
                    return bad("scale must be finite and non-negative");
                }
                if !(rate.is_finite() && *rate >= 0.0) {
                    return bad("rate must be finite and non-negative");
                }
                if !poly.is_finite() {
                    return bad("poly must be finite");
                }
            }
        }
        Ok(())
    }

    /// `(level, value)` from which the sequence is constant, when it is
    /// eventually constant.
    pub fn constant_from(&self) -> Option<(usize, f64)> {
        match self {
            Sequence::Constant(v) => Some((0, *v)),
            Sequence::Table(t) => {
                let last = *t.last().unwrap();
                let mut from = t.len() - 1;
                while from > 0 && t[from - 1] == last {
                    from -= 1;
                }
                Some((from, last))
            }
            Sequence::Geometric { scale, rate, poly } => {
                if *scale == 0.0 {
                    Some((0, 0.0))
                } else if *rate == 0.0 && *poly == 0.0 {
                    Some((0, scale.min(1.0)))
                } else if *rate == 0.0 && *poly > 0.0 {
                    // Increasing and clamped at 1.
                    let mut j = 0usize;
                    while self.value(j) < 1.0 {
                        j += 1;
                    }
                    Some((j, 1.0))
                } else {
                    None
                }
            }
        }
    }

    /// Whether every value is strictly positive (and stays so).
    pub fn all_positive_from(&self, j0: usize) -> bool {
        match self {
            Sequence::Constant(v) => *v > 0.0,
            Sequence::Table(t) => t[j0.min(t.len() - 1)..].iter().all(|v| *v > 0.0),
            Sequence::Geometric { scale, .. } => *scale > 0.0,
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        match self {
            Sequence::Constant(v) => {
                h.update(b"C");
                h.update(v.to_le_bytes());
            }
            Sequence::Table(t) => {
                h.update(b"T");
                h.update((t.len() as u64).to_le_bytes());
                for v in t {
                    h.update(v.to_le_bytes());
                }
            }
            Sequence::Geometric { scale, rate, poly } => {
                h.update(b"G");
                h.update(scale.to_le_bytes());
                h.update(rate.to_le_bytes());
                h.update(poly.to_le_bytes());
            }
        }
    }
}

/// Lacunary family: state-1 kernels are product Bernoulli with survival
/// probabilities that drop only at levels `b^m − 1`, and zeros refresh
/// only at the sparse levels `b^{n+1} − 2`.
///
/// With `p_0 = 2^{-a}` and `p_j = 2^{-a(b^{⌊log_b(j+1)⌋} − b^{⌊log_b j⌋})}`
/// the cumulative product `∏_{ℓ≤j} p_ℓ` is `2^{-a·b^{⌊log_b(j+1)⌋}}`,
/// which makes θ = 1 − a exactly. The refresh probability at level
/// `j_n − 1` (with `j_n = b^{n+1} − 1`) is the geometric mean of the bracket
/// `[2^{-(j_n−1)}, j_n^{-2} 2^{(a(1−1/b)−1) j_n}]` for every `n` beyond the
/// first index `n_0` from which the bracket is non-empty.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lacunary {
    a: f64,
    b: u32,
    n0: u32,
}

impl Lacunary {
    pub fn new(a: f64, b: u32) -> Result<Self, KernelError> {
        if !(a > 0.0 && a < 1.0) {
            return Err(KernelError::InvalidParameter {
                name: "a",
                reason: "must lie in (0, 1)",
            });
        }
        if b < 2 {
            return Err(KernelError::InvalidParameter {
                name: "b",
                reason: "must be an integer >= 2",
            });
        }
        let c = a * (1.0 - 1.0 / b as f64);
        // g(j) = c j − 2 log2 j − 1 is convex with g(1) < 0, so the bracket
        // is non-empty exactly on a tail of levels.
        let mut n = 0u32;
        loop {
            let jn = Self::jn_f64(b, n);
            if !jn.is_finite() || jn > 1e300 {
                return Err(KernelError::InvalidParameter {
                    name: "a",
                    reason: "too small: refresh bracket never opens",
                });
            }
            if c * jn - 2.0 * log2(jn) - 1.0 >= 0.0 {
                break;
            }
            n += 1;
        }
        Ok(Lacunary { a, b, n0: n })
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> u32 {
        self.b
    }
    /// First index whose refresh bracket is non-empty; refreshes happen for
    /// `n > n0`.
    pub fn n0(&self) -> u32 {
        self.n0
    }

    fn jn_f64(b: u32, n: u32) -> f64 {
        powf(b as f64, (n + 1) as f64) - 1.0
    }

    /// `j_n = b^{n+1} − 1`, saturating.
    pub fn jn(&self, n: u32) -> u64 {
        (self.b as u64)
            .checked_pow(n + 1)
            .map(|v| v - 1)
            .unwrap_or(u64::MAX)
    }

    /// Exponent `e` with `p_j = 2^{-a e}`.
    fn drop_exponent(&self, j: usize) -> f64 {
        if j == 0 {
            return 1.0;
        }
        match exact_log(self.b as u64, j as u64 + 1) {
            Some(m) if m >= 1 => {
                let hi = (self.b as f64).powi_exact(m);
                let lo = (self.b as f64).powi_exact(m - 1);
                hi - lo
            }
            _ => 0.0,
        }
    }

    pub fn p(&self, j: usize) -> f64 {
        exp2(-self.a * self.drop_exponent(j))
    }

    /// `log2` of the two ends of the refresh bracket at index `n`.
    pub fn bracket_log2(&self, n: u32) -> (f64, f64) {
        let jn = Self::jn_f64(self.b, n);
        let c = self.a * (1.0 - 1.0 / self.b as f64);
        (-(jn - 1.0), -2.0 * log2(jn) + (c - 1.0) * jn)
    }

    /// Index `n` with `j = j_n − 1`, if any.
    pub fn refresh_index(&self, j: usize) -> Option<u32> {
        let m = exact_log(self.b as u64, j as u64 + 2)?;
        if m == 0 {
            return None;
        }
        Some(m - 1)
    }

    pub fn q(&self, j: usize) -> f64 {
        match self.refresh_index(j) {
            Some(n) if n > self.n0 => {
                let (lo, hi) = self.bracket_log2(n);
                exp2(0.5 * (lo + hi))
            }
            _ => 0.0,
        }
    }
}

trait PowiExact {
    fn powi_exact(self, m: u32) -> f64;
}
impl PowiExact for f64 {
    fn powi_exact(self, m: u32) -> f64 {
        let mut r = 1.0;
        for _ in 0..m {
            r *= self;
        }
        r
    }
}

/// `m` with `b^m == x`, if `x` is an exact power of `b`.
fn exact_log(b: u64, x: u64) -> Option<u32> {
    let mut v = 1u64;
    let mut m = 0u32;
    while v < x {
        v = v.checked_mul(b)?;
        m += 1;
    }
    (v == x).then_some(m)
}

/// The families a schedule can be drawn from.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum KernelFamily {
    /// The same pair of kernels at every level.
    Constant {
        nu0: PairDistribution,
        nu1: PairDistribution,
    },
    /// One `[ν_0, ν_1]` row per level; the last row repeats.
    Table { rows: Vec<[PairDistribution; 2]> },
    /// `ν_{1,j} = Bernoulli(p_j)^{⊗2}` and `ν_{0,j} = Bernoulli(q_j)^{⊗2}`.
    ProductBernoulli { p: Sequence, q: Sequence },
    Lacunary(Lacunary),
}

/// Whether `ν_{1,j}(00)` eventually vanishes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ExtinctionPattern {
    /// `ν_{1,j}(00) = 0` for every `j ≥ level` (smallest such level).
    ZeroFrom(usize),
    /// `ν_{1,j}(00) > 0` for infinitely many `j`.
    PositiveInfinitelyOften,
}

/// A full kernel schedule together with the law of the root state.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelSchedule {
    pub family: KernelFamily,
    /// `P(X_root = 1)`.
    pub initial_law: f64,
}

impl KernelSchedule {
    /// Builds a schedule and checks every row it can reach (all table rows;
    /// for sequence families the first 64 levels and the constant tail).
    pub fn new(family: KernelFamily, initial_law: f64) -> Result<Self, KernelError> {
        let s = KernelSchedule {
            family,
            initial_law,
        };
        if !(0.0..=1.0).contains(&initial_law) {
            return Err(KernelError::InvalidParameter {
                name: "initial_law",
                reason: "probability outside [0, 1]",
            });
        }
        match &s.family {
            KernelFamily::Constant { nu0, nu1 } => {
                for (state, d) in [(0u8, nu0), (1, nu1)] {
                    d.check().map_err(|failure| KernelError::InvalidRow {
                        level: 0,
                        state,
                        failure,
                    })?;
                }
            }
            KernelFamily::Table { rows } => {
                if rows.is_empty() {
                    return Err(KernelError::MissingRow { level: 0, state: 0 });
                }
                for (level, r) in rows.iter().enumerate() {
                    for (state, d) in r.iter().enumerate() {
                        d.check().map_err(|failure| KernelError::InvalidRow {
                            level,
                            state: state as u8,
                            failure,
                        })?;
                    }
                }
            }
            KernelFamily::ProductBernoulli { p, q } => {
                p.validate("p")?;
                q.validate("q")?;
            }
            KernelFamily::Lacunary(_) => {}
        }
        Ok(s)
    }

    pub fn constant(nu0: PairDistribution, nu1: PairDistribution) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Constant { nu0, nu1 }, 1.0)
    }

    pub fn product_bernoulli(p: Sequence, q: Sequence) -> Result<Self, KernelError> {
        Self::new(KernelFamily::ProductBernoulli { p, q }, 1.0)
    }

    /// The lacunary schedule with parameters `(a, b)`.
    pub fn lacunary(a: f64, b: u32) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Lacunary(Lacunary::new(a, b)?), 1.0)
    }

    /// Builds a table from sparse rows `(level, state, distribution)`.
    /// A missing level inherits the previous level's row for that state;
    /// levels after the last row repeat it.
    pub fn from_rows(
        rows: &[(usize, u8, PairDistribution)],
        initial_law: f64,
    ) -> Result<Self, KernelError> {
        let depth = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let mut dense: Vec<[Option<PairDistribution>; 2]> = alloc::vec![[None, None]; depth];
        for &(level, state, d) in rows {
            if state > 1 {
                return Err(KernelError::InvalidParameter {
                    name: "state",
                    reason: "parent state must be 0 or 1",
                });
            }
            dense[level][state as usize] = Some(d);
        }
        let mut out = Vec::with_capacity(depth);
        let mut last: [Option<PairDistribution>; 2] = [None, None];
        for (level, r) in dense.iter().enumerate() {
            for s in 0..2 {
                if let Some(d) = r[s] {
                    last[s] = Some(d);
                }
                if last[s].is_none() {
                    return Err(KernelError::MissingRow {
                        level,
                        state: s as u8,
                    });
                }
            }
            out.push([last[0].unwrap(), last[1].unwrap()]);
        }
        Self::new(KernelFamily::Table { rows: out }, initial_law)
    }

    pub fn with_initial_law(mut self, initial_law: f64) -> Result<Self, KernelError> {
        if !(0.0..=1.0).contains(&initial_law) {
            return Err(KernelError::InvalidParameter {
                name: "initial_law",
                reason: "probability outside [0, 1]",
            });
        }
        self.initial_law = initial_law;
        Ok(self)
    }

    /// `ν_{state, j}`.
    pub fn kernel_at(&self, j: usize, state: bool) -> PairDistribution {
        match &self.family {
            KernelFamily::Constant { nu0, nu1 } => {
                if state {
                    *nu1
                } else {
                    *nu0
                }
            }
            KernelFamily::Table { rows } => rows[j.min(rows.len() - 1)][state as usize],
            KernelFamily::ProductBernoulli { p, q } => {
                PairDistribution::product_bernoulli(if state { p.value(j) } else { q.value(j) })
            }
            KernelFamily::Lacunary(l) => {
                PairDistribution::product_bernoulli(if state { l.p(j) } else { l.q(j) })
            }
        }
    }

    /// Level from which both kernels stop changing, if any.
    pub fn constant_from(&self) -> Option<usize> {
        match &self.family {
            KernelFamily::Constant { .. } => Some(0),
            KernelFamily::Table { rows } => {
                let mut from = rows.len() - 1;
                while from > 0 && rows[from - 1] == rows[from] {
                    from -= 1;
                }
                Some(from)
            }
            KernelFamily::ProductBernoulli { p, q } => {
                let (a, _) = p.constant_from()?;
                let (b, _) = q.constant_from()?;
                Some(a.max(b))
            }
            KernelFamily::Lacunary(_) => None,
        }
    }

    /// Level from which `ν_{state, j}` stops changing, if any.
    pub fn state_constant_from(&self, state: bool) -> Option<usize> {
        match &self.family {
            KernelFamily::Constant { .. } => Some(0),
            KernelFamily::Table { rows } => {
                let s = state as usize;
                let mut from = rows.len() - 1;
                while from > 0 && rows[from - 1][s] == rows[from][s] {
                    from -= 1;
                }
                Some(from)
            }
            KernelFamily::ProductBernoulli { p, q } => {
                if state { p } else { q }.constant_from().map(|(l, _)| l)
            }
            KernelFamily::Lacunary(_) => None,
        }
    }

    /// Eventual behaviour of `ν_{1,j}(00)`.
    pub fn extinction_pattern(&self) -> ExtinctionPattern {
        match self.state_constant_from(true) {
            // Lacunary drops recur forever; non-constant geometric sequences
            // decay to 0 so (1 − p_j)² → 1.
            None => ExtinctionPattern::PositiveInfinitelyOften,
            Some(from) => {
                if self.kernel_at(from, true).p00 > 0.0 {
                    return ExtinctionPattern::PositiveInfinitelyOften;
                }
                let mut j = from;
                while j > 0 && self.kernel_at(j - 1, true).p00 == 0.0 {
                    j -= 1;
                }
                ExtinctionPattern::ZeroFrom(j)
            }
        }
    }

    /// Smallest level from which `η_j = 0`, if zeros eventually stop
    /// refreshing.
    pub fn eta_zero_from(&self) -> Option<usize> {
        match &self.family {
            KernelFamily::ProductBernoulli { q, .. } => {
                let (from, v) = q.constant_from()?;
                if v != 0.0 {
                    return None;
                }
                let mut j = from;
                while j > 0 && q.value(j - 1) == 0.0 {
                    j -= 1;
                }
                Some(j)
            }
            KernelFamily::Lacunary(_) => None,
            _ => {
                let from = self.state_constant_from(false)?;
                if self.kernel_at(from, false).p00 != 1.0 {
                    return None;
                }
                let mut j = from;
                while j > 0 && self.kernel_at(j - 1, false).p00 == 1.0 {
                    j -= 1;
                }
                Some(j)
            }
        }
    }

    /// 16-byte digest of the schedule, stable across platforms.
    pub fn fingerprint(&self) -> [u8; 16] {
        let mut h = Sha256::new();
        h.update(b"treewave-schedule-v1");
        h.update(self.initial_law.to_le_bytes());
        let put = |h: &mut Sha256, d: &PairDistribution| {
            for v in d.as_array() {
                h.update(v.to_le_bytes());
            }
        };
        match &self.family {
            KernelFamily::Constant { nu0, nu1 } => {
                h.update(b"constant");
                put(&mut h, nu0);
                put(&mut h, nu1);
            }
            KernelFamily::Table { rows } => {
                h.update(b"table");
                h.update((rows.len() as u64).to_le_bytes());
                for r in rows {
                    put(&mut h, &r[0]);
                    put(&mut h, &r[1]);
                }
            }
            KernelFamily::ProductBernoulli { p, q } => {
                h.update(b"product-bernoulli");
                p.hash_into(&mut h);
                q.hash_into(&mut h);
            }
            KernelFamily::Lacunary(l) => {
                h.update(b"lacunary");
                h.update(l.a.to_le_bytes());
                h.update(l.b.to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        out
    }
}

/// Diagnostics over the first `J` levels of a schedule.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    pub depth: usize,
    /// `(level, parent state, failure)` for every bad row reached.
    pub row_failures: Vec<(usize, u8, RowFailure)>,
    pub theta: crate::params::ThetaValue,
    /// θ < 1 (the model's standing assumption).
    pub theta_below_one: bool,
    pub eta_series: crate::params::SeriesClass,
    pub extinction: ExtinctionPattern,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.row_failures.is_empty() && self.theta_below_one
    }
}

/// Checks rows up to level `depth` and reports the regime diagnostics.
pub fn validate_schedule(s: &KernelSchedule, depth: usize) -> ValidationReport {
    let mut row_failures = Vec::new();
    for j in 0..=depth {
        for state in [false, true] {
            if let Err(f) = s.kernel_at(j, state).check() {
                row_failures.push((j, state as u8, f));
            }
        }
    }
    let theta = crate::params::theta(s, depth.max(2));
    ValidationReport {
        depth,
        row_failures,
        theta_below_one: theta.value < 1.0,
        theta,
        eta_series: crate::params::eta_series(s, depth.max(2)),
        extinction: s.extinction_pattern(),
    }
}

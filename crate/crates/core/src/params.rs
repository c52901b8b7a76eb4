//! Quantities derived from a kernel schedule.
//!
//! * `γ_j = 2ν_{1,j}(11) + ν_{1,j}(10) + ν_{1,j}(01)` — mean number of state-1
//!   children of a state-1 vertex.
//! * `η_j = 1 − ν_{0,j}(00)` — chance that a state-0 vertex has a state-1 child.
//! * `j̲` — first level from which every `γ_j` is positive.
//! * `θ = liminf_j (Σ_{ℓ=j̲}^{j} log γ_ℓ) / (j log 2)`.
//! * `ς_j = 2 Σ_{n≥j} ν_{1,n}(11) / (γ_n ∏_{ℓ=j}^{n} γ_ℓ)`.
//! * `h̃ = inf{h > 0 : Σ_j 2^{(1−ḥ/h) j} η_j = ∞}`.
//! * `Φ_j(z) = E[z^{#S_j}]` where `S_j` is the set of state-1 vertices at
//!   level `j`.
//!
//! Every family in [`crate::kernels`] has closed forms for θ, h̃ and the
//! summability of `Σ 2^j η_j`; the numerical fallbacks are kept for
//! diagnostics and for checking the closed forms.

use alloc::vec::Vec;
use thiserror::Error;

use crate::float::{exp2, log2};
use crate::kernels::{ExtinctionPattern, KernelFamily, KernelSchedule, PairDistribution, Sequence};
use crate::stats::least_squares;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("γ_{level} = 0 inside the summation range of ς_{start}")]
    ZeroGamma { start: usize, level: usize },
    #[error("ς_{start} is undefined: no level from {start} on has positive γ")]
    NoPositiveTail { start: usize },
    #[error("exponents must satisfy 0 < h_low < h_high (got {h_low}, {h_high})")]
    Exponents { h_low: f64, h_high: f64 },
    #[error("depth must be at least {min} (got {depth})")]
    Depth { depth: usize, min: usize },
}

pub fn gamma(s: &KernelSchedule, j: usize) -> f64 {
    s.kernel_at(j, true).mean_ones()
}

pub fn eta(s: &KernelSchedule, j: usize) -> f64 {
    s.kernel_at(j, false).any_one()
}

/// Mean number of state-1 children of a state-0 vertex.
pub fn zeta(s: &KernelSchedule, j: usize) -> f64 {
    s.kernel_at(j, false).mean_ones()
}

/// `j̲`, or `None` when `γ_j = 0` infinitely often.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum JUnder {
    Finite(usize),
    Infinite,
}

impl JUnder {
    pub fn finite(self) -> Option<usize> {
        match self {
            JUnder::Finite(j) => Some(j),
            JUnder::Infinite => None,
        }
    }
}

/// Computes `j̲` exactly from the schedule's tail structure.
pub fn j_under(s: &KernelSchedule) -> JUnder {
    match s.state_constant_from(true) {
        // Lacunary and non-constant geometric survival probabilities are
        // strictly positive at every level.
        None => JUnder::Finite(0),
        Some(from) => {
            if gamma(s, from) == 0.0 {
                return JUnder::Infinite;
            }
            let mut j = from;
            while j > 0 && gamma(s, j - 1) > 0.0 {
                j -= 1;
            }
            JUnder::Finite(j)
        }
    }
}

/// A value of θ with a flag telling whether it is the exact limit or a
/// finite-depth estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThetaValue {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub value: f64,
    pub exact: bool,
}

/// θ from the schedule's closed form when one exists, otherwise the
/// finite-depth estimate of [`theta_cesaro`].
pub fn theta(s: &KernelSchedule, depth: usize) -> ThetaValue {
    let Some(ju) = j_under(s).finite() else {
        return ThetaValue {
            value: f64::NEG_INFINITY,
            exact: true,
        };
    };
    let _ = (ju, depth);
    match (&s.family, s.state_constant_from(true)) {
        (KernelFamily::Lacunary(l), _) => ThetaValue {
            value: 1.0 - l.a(),
            exact: true,
        },
        // Non-constant geometric survival: log γ_j → −∞, hence so do the
        // Cesàro averages.
        (_, None) => ThetaValue {
            value: f64::NEG_INFINITY,
            exact: true,
        },
        (_, Some(from)) => ThetaValue {
            value: log2(gamma(s, from)),
            exact: true,
        },
    }
}

/// Finite-depth θ: the minimum over `j ∈ [J/2, J]` of the averages
/// `(Σ_{ℓ=j̲}^{j} log₂ γ_ℓ) / j`.
pub fn theta_cesaro(s: &KernelSchedule, depth: usize) -> ThetaValue {
    let Some(ju) = j_under(s).finite() else {
        return ThetaValue {
            value: f64::NEG_INFINITY,
            exact: true,
        };
    };
    let mut acc = 0.0;
    let mut best = f64::INFINITY;
    for j in ju..=depth {
        acc += log2(gamma(s, j));
        if j >= (depth / 2).max(1) {
            best = best.min(acc / j as f64);
        }
    }
    ThetaValue {
        value: best,
        exact: false,
    }
}

/// Summability of `Σ_j 2^j η_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SeriesClass {
    Convergent,
    Divergent,
}

/// Decides `Σ 2^j η_j < ∞` from the tail structure of the schedule.
pub fn eta_series(s: &KernelSchedule, _depth: usize) -> SeriesClass {
    if s.eta_zero_from().is_some() {
        return SeriesClass::Convergent;
    }
    match &s.family {
        KernelFamily::Lacunary(_) => SeriesClass::Divergent,
        KernelFamily::ProductBernoulli {
            q: Sequence::Geometric { rate, poly, .. },
            ..
        } => {
            // η_j ≍ 2 q_j for small q_j.
            if *rate < 1.0 || (*rate == 1.0 && *poly >= -1.0) {
                SeriesClass::Divergent
            } else {
                SeriesClass::Convergent
            }
        }
        _ => SeriesClass::Divergent, // eventually constant and positive
    }
}

/// Upper bound on `Σ_{j>m} 2^j η_j / (1 − η_j)`, when the series converges
/// and the bound is computable.
pub fn eta_tail_bound(s: &KernelSchedule, m: usize) -> Option<f64> {
    if let Some(z) = s.eta_zero_from() {
        if m + 1 >= z {
            return Some(0.0);
        }
        let mut acc = 0.0;
        for j in m + 1..z {
            let e = eta(s, j);
            if e >= 1.0 {
                return None;
            }
            acc += exp2(j as f64) * e / (1.0 - e);
        }
        return Some(acc);
    }
    if let KernelFamily::ProductBernoulli {
        q: Sequence::Geometric { scale, rate, poly },
        ..
    } = &s.family
    {
        if *rate <= 1.0 {
            return None;
        }
        // η_j ≤ 2 q_j, term ratio ≤ ((m+3)/(m+2))^poly · 2^{1−rate} from m+1 on.
        let ratio = libm::pow((m as f64 + 3.0) / (m as f64 + 2.0), poly.max(0.0)) * exp2(1.0 - rate);
        if ratio >= 1.0 {
            return None;
        }
        let j = (m + 1) as f64;
        let q = (scale * libm::pow(j + 1.0, *poly) * exp2(-rate * j)).min(1.0);
        let e = 2.0 * q;
        if e >= 0.5 {
            return None;
        }
        return Some(exp2(j) * e / (1.0 - e) / (1.0 - ratio));
    }
    None
}

/// How a value of ς was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum VarsigmaCertificate {
    /// Finite sum plus an exact geometric tail.
    ClosedTail,
    /// Every numerator vanishes from the start level on.
    ZeroNumerators,
    /// Eventually constant terms with `γ ≤ 1` and a positive numerator.
    DivergentTail,
    /// Truncated sum with a rigorous tail bound.
    BoundedTail,
    /// Truncated sum; the tail estimate comes from the last term ratio.
    RatioEstimate,
    /// Partial sums exceeded `1/tol`.
    PartialSumsExceeded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarsigmaValue {
    /// May be `+∞`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub value: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub tail_bound: f64,
    pub certificate: VarsigmaCertificate,
}

const VARSIGMA_MAX_TERMS: usize = 1 << 20;

/// `ς_j` to within `tol` (absolute tail bound), or `+∞` with a divergence
/// certificate.
pub fn varsigma(s: &KernelSchedule, j: usize, tol: f64) -> Result<VarsigmaValue, ParamError> {
    // Numerators ν_{1,n}(11) and the running product ∏_{ℓ=j}^{n} γ_ℓ.
    let term = |n: usize, prod: f64| -> f64 {
        let d = s.kernel_at(n, true);
        2.0 * d.p11 / (d.mean_ones() * prod)
    };
    if let Some(from) = s.state_constant_from(true) {
        let m = from.max(j);
        let mut prod = 1.0;
        let mut sum = 0.0;
        for n in j..m {
            let g = gamma(s, n);
            if g == 0.0 {
                return Err(ParamError::ZeroGamma { start: j, level: n });
            }
            prod *= g;
            sum += term(n, prod);
        }
        let g = gamma(s, m);
        let c = s.kernel_at(m, true).p11;
        if g == 0.0 {
            return Err(ParamError::ZeroGamma { start: j, level: m });
        }
        if c == 0.0 {
            let cert = if sum == 0.0 {
                VarsigmaCertificate::ZeroNumerators
            } else {
                VarsigmaCertificate::ClosedTail
            };
            return Ok(VarsigmaValue {
                value: sum,
                tail_bound: 0.0,
                certificate: cert,
            });
        }
        if g <= 1.0 {
            return Ok(VarsigmaValue {
                value: f64::INFINITY,
                tail_bound: 0.0,
                certificate: VarsigmaCertificate::DivergentTail,
            });
        }
        // Σ_{k≥1} 2c / (g · prod · g^k) = 2c / (g · prod · (g − 1)).
        sum += 2.0 * c / (g * prod * (g - 1.0));
        return Ok(VarsigmaValue {
            value: sum,
            tail_bound: 0.0,
            certificate: VarsigmaCertificate::ClosedTail,
        });
    }

    let mut prod = 1.0;
    let mut sum = 0.0;
    let mut prev_term = f64::NAN;
    // Rigorous bound for the lacunary family: ∏_{0}^{n} γ ≥ 2^{(1−a)(n+1)}.
    let lacunary = match &s.family {
        KernelFamily::Lacunary(l) => {
            let mut head = 1.0;
            for n in 0..j {
                head *= gamma(s, n);
            }
            Some((1.0 - l.a(), head))
        }
        _ => None,
    };
    for n in j..j + VARSIGMA_MAX_TERMS {
        let g = gamma(s, n);
        if g == 0.0 {
            return Err(ParamError::ZeroGamma { start: j, level: n });
        }
        prod *= g;
        let t = term(n, prod);
        sum += t;
        if !sum.is_finite() || sum > 1.0 / tol {
            return Ok(VarsigmaValue {
                value: f64::INFINITY,
                tail_bound: 0.0,
                certificate: VarsigmaCertificate::PartialSumsExceeded,
            });
        }
        if let Some((rate, head)) = lacunary {
            let bound = head * exp2(-rate * (n as f64 + 2.0)) / (1.0 - exp2(-rate));
            if bound < tol {
                return Ok(VarsigmaValue {
                    value: sum,
                    tail_bound: bound,
                    certificate: VarsigmaCertificate::BoundedTail,
                });
            }
        } else if prev_term.is_finite() && prev_term > 0.0 {
            let r = t / prev_term;
            if r < 1.0 {
                let est = t * r / (1.0 - r);
                if est < tol {
                    return Ok(VarsigmaValue {
                        value: sum,
                        tail_bound: est,
                        certificate: VarsigmaCertificate::RatioEstimate,
                    });
                }
            }
        }
        prev_term = t;
    }
    Ok(VarsigmaValue {
        value: f64::INFINITY,
        tail_bound: 0.0,
        certificate: VarsigmaCertificate::PartialSumsExceeded,
    })
}

/// How tight a value of h̃ is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HTildeExactness {
    Exact,
    /// Only `lo` is guaranteed.
    LowerBoundOnly,
    /// Finite-depth bracket `[lo, hi]`.
    Bracket,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HTilde {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub lo: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub hi: f64,
    pub exactness: HTildeExactness,
}

impl HTilde {
    fn exact(v: f64) -> Self {
        HTilde {
            lo: v,
            hi: v,
            exactness: HTildeExactness::Exact,
        }
    }
    pub fn is_exact(&self) -> bool {
        self.exactness == HTildeExactness::Exact
    }
    pub fn value(&self) -> Option<f64> {
        self.is_exact().then_some(self.lo)
    }
}

/// h̃ from the tail of `η`.
pub fn h_tilde(s: &KernelSchedule, h_low: f64, depth: usize) -> HTilde {
    if s.eta_zero_from().is_some() {
        return HTilde::exact(f64::INFINITY);
    }
    if let KernelFamily::Lacunary(l) = &s.family {
        // Refresh mass at level j_n − 1 is ≍ 2^{−(1 − c/2) j_n}/j_n with
        // c = a(1 − 1/b), so the weighted series diverges iff ḥ/h < c/2.
        let c = l.a() * (1.0 - 1.0 / l.b() as f64);
        return HTilde::exact(2.0 * h_low / c);
    }
    if s.state_constant_from(false).is_some() {
        // Eventually constant and positive η.
        return HTilde::exact(h_low);
    }
    match &s.family {
        KernelFamily::ProductBernoulli {
            q: Sequence::Geometric { rate, .. },
            ..
        } => {
            if *rate < 1.0 {
                HTilde::exact(h_low / (1.0 - rate))
            } else {
                HTilde::exact(f64::INFINITY)
            }
        }
        _ => h_tilde_numeric(s, h_low, depth),
    }
}

/// Threshold on the slope of `log₂` of the weighted terms.
pub const H_TILDE_SLOPE_THRESHOLD: f64 = 0.05;

/// Finite-depth bracket for h̃: the terms `2^{(1−ḥ/h) j} η_j` have log-slope
/// `(1 − ḥ/h) + s_η` over `j ∈ [J/2, J]`; `h` is declared divergent above
/// slope `+0.05` and convergent below `−0.05`.
pub fn h_tilde_numeric(s: &KernelSchedule, h_low: f64, depth: usize) -> HTilde {
    let lo_j = (depth / 2).max(1);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in lo_j..=depth {
        let e = eta(s, j);
        if e > 0.0 {
            xs.push(j as f64);
            ys.push(log2(e));
        }
    }
    if xs.len() < 2 {
        return HTilde {
            lo: f64::INFINITY,
            hi: f64::INFINITY,
            exactness: HTildeExactness::Bracket,
        };
    }
    let s_eta = least_squares(&xs, &ys).slope;
    let at = |target: f64| -> f64 {
        // (1 − ḥ/h) + s_η = target  ⇒  h = ḥ / (1 + s_η − target)
        let d = 1.0 + s_eta - target;
        if d <= 0.0 {
            f64::INFINITY
        } else {
            (h_low / d).max(h_low)
        }
    };
    HTilde {
        lo: at(-H_TILDE_SLOPE_THRESHOLD),
        hi: at(H_TILDE_SLOPE_THRESHOLD),
        exactness: HTildeExactness::Bracket,
    }
}

/// `Φ_j(z) = E[z^{#S_j}]`, by the subtree recursion
/// `f_m(x) = Σ_{a,b} ν_{x,m}(a,b) f_{m+1}(a) f_{m+1}(b)` from `f_j(x) = z^x`.
pub fn phi_gf(s: &KernelSchedule, j: usize, z: f64) -> f64 {
    if z == 1.0 {
        return 1.0;
    }
    let (f0, f1) = subtree_gf(s, 0, j, 1.0, z);
    s.initial_law * f1 + (1.0 - s.initial_law) * f0
}

/// Generating functions `(f_from(0), f_from(1))` of `#S_to` restricted to
/// the subtree of a vertex at level `from`, with boundary values `(a0, a1)`
/// at level `to`.
pub fn subtree_gf(s: &KernelSchedule, from: usize, to: usize, a0: f64, a1: f64) -> (f64, f64) {
    let (mut f0, mut f1) = (a0, a1);
    for m in (from..to).rev() {
        let k0 = s.kernel_at(m, false);
        let k1 = s.kernel_at(m, true);
        let n0 = k0.pgf_pair(f0, f1);
        let n1 = k1.pgf_pair(f0, f1);
        f0 = n0;
        f1 = n1;
    }
    (f0, f1)
}

impl PairDistribution {
    /// `Σ ν(a,b) f(a) f(b)` with `f(0) = f0`, `f(1) = f1`.
    #[inline]
    pub fn pgf_pair(&self, f0: f64, f1: f64) -> f64 {
        self.p00 * f0 * f0 + (self.p01 + self.p10) * f0 * f1 + self.p11 * f1 * f1
    }
}

/// `Φ_j(0) = P(S_j = ∅)`.
pub fn phi0(s: &KernelSchedule, j: usize) -> f64 {
    let (f0, f1) = subtree_gf(s, 0, j, 1.0, 0.0);
    s.initial_law * f1 + (1.0 - s.initial_law) * f0
}

/// `E[#S_j]`, exactly.
pub fn expected_ones(s: &KernelSchedule, j: usize) -> f64 {
    let mut m = s.initial_law;
    for l in 0..j {
        let total = exp2(l as f64);
        m = gamma(s, l) * m + zeta(s, l) * (total - m);
    }
    m
}

/// `E[#S̃_j]`, the mean number of fresh state-1 vertices (father in state 0).
pub fn expected_fresh(s: &KernelSchedule, j: usize) -> f64 {
    if j == 0 {
        return 0.0;
    }
    let m = expected_ones(s, j - 1);
    zeta(s, j - 1) * (exp2((j - 1) as f64) - m)
}

/// Smallest fixed point in `[0,1]` of `g(s) = Σ ν(a,b) s^{a+b}`: the
/// extinction probability of a Galton–Watson process with offspring law
/// `ν`.
pub fn extinction_fixed_point(nu: &PairDistribution) -> f64 {
    let m1 = nu.p01 + nu.p10;
    let m = nu.mean_ones();
    if nu.p11 == 0.0 {
        // Linear: p00 + m1 s = s.
        return if m1 >= 1.0 { 0.0 } else { 1.0 };
    }
    if m <= 1.0 {
        return 1.0;
    }
    // p11 s² − (1 − m1) s + p00 = 0; the smaller root, written to avoid
    // cancellation.
    let b = 1.0 - m1;
    let disc = (b * b - 4.0 * nu.p11 * nu.p00).max(0.0);
    2.0 * nu.p00 / (b + crate::float::sqrt(disc))
}

/// Which of the two structural regimes the schedule falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Regime {
    /// `Σ 2^j η_j < ∞` and θ < 1: finitely many refreshes, the spectrum
    /// lives on `{ḥ, h̄}`.
    SummableRefresh,
    /// `Σ 2^j η_j = ∞` and θ < 1: refreshes everywhere, a linear branch
    /// of slope `1/h̃`.
    DivergentRefresh,
    /// θ ≥ 1.
    OutOfScope,
}

/// Everything derived from a schedule at a given depth.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DerivedParams {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_low: f64,
    /// `+∞` allowed.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_high: f64,
    pub depth: usize,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float::vec"))]
    pub gamma: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float::vec"))]
    pub eta: Vec<f64>,
    pub j_under: JUnder,
    pub theta: ThetaValue,
    pub theta_finite_depth: ThetaValue,
    /// `ς_{j̲}` (absent when `j̲ = ∞`).
    pub varsigma: Option<VarsigmaValue>,
    pub h_tilde: HTilde,
    pub eta_series: SeriesClass,
    pub extinction: ExtinctionPattern,
    /// `Φ_j(0)` for `j = 0..=depth`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float::vec"))]
    pub phi0: Vec<f64>,
    pub regime: Regime,
}

/// Tolerance used for `ς` inside [`DerivedParams::compute`].
pub const VARSIGMA_TOL: f64 = 1e-12;

impl DerivedParams {
    pub fn compute(
        s: &KernelSchedule,
        h_low: f64,
        h_high: f64,
        depth: usize,
    ) -> Result<Self, ParamError> {
        if !(h_low > 0.0 && h_low < h_high) || h_low.is_nan() || h_high.is_nan() {
            return Err(ParamError::Exponents { h_low, h_high });
        }
        if depth < 2 {
            return Err(ParamError::Depth { depth, min: 2 });
        }
        let ju = j_under(s);
        let theta_v = theta(s, depth);
        let varsigma = match ju {
            JUnder::Finite(j) => Some(varsigma(s, j, VARSIGMA_TOL)?),
            JUnder::Infinite => None,
        };
        let eta_series = eta_series(s, depth);
        let regime = classify(theta_v.value, eta_series);
        let mut phi = Vec::with_capacity(depth + 1);
        for j in 0..=depth {
            phi.push(phi0(s, j));
        }
        Ok(DerivedParams {
            h_low,
            h_high,
            depth,
            gamma: (0..=depth).map(|j| gamma(s, j)).collect(),
            eta: (0..=depth).map(|j| eta(s, j)).collect(),
            j_under: ju,
            theta: theta_v,
            theta_finite_depth: theta_cesaro(s, depth),
            varsigma,
            h_tilde: h_tilde(s, h_low, depth),
            eta_series,
            extinction: s.extinction_pattern(),
            phi0: phi,
            regime,
        })
    }
}

fn classify(theta: f64, series: SeriesClass) -> Regime {
    if theta >= 1.0 {
        return Regime::OutOfScope;
    }
    match series {
        SeriesClass::Convergent => Regime::SummableRefresh,
        SeriesClass::Divergent => Regime::DivergentRefresh,
    }
}

/// Regime of a parameter set.
pub fn classify_regime(p: &DerivedParams) -> Regime {
    p.regime
}

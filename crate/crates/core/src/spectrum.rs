//! Predicted singularity spectrum `h ↦ d(h) = dim_H E_h` and the law of
//! the set Θ of points reached by infinite lines of state-1 vertices.
//!
//! Two regimes (θ < 1 throughout):
//!
//! * **summable refresh** (`Σ 2^j η_j < ∞`): `d(h̄) = 1`; `d(ḥ)` is `−∞`
//!   if θ < 0 and otherwise `θ` or `−∞` according to whether Θ is empty;
//!   `d = −∞` elsewhere.
//! * **divergent refresh** (`Σ 2^j η_j = ∞`): `d(h) = h/h̃` on `(ḥ, h̃]` if
//!   `h̃ < h̄`, or on `(ḥ, h̄)` with `d(h̄) = 1` if `h̃ ≥ h̄`; at `ḥ` the value
//!   is `ḥ/h̃`, raised to θ when Θ is non-empty and `ḥ/h̃ < θ`.
//!
//! When `h̃ < h̄`, `d(h̄) = −∞`: every point has exponent at most `h̃` once
//! the weighted refresh series diverges.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::float::log2;
use crate::kernels::{ExtinctionPattern, KernelSchedule};
use crate::params::{
    eta, eta_tail_bound, extinction_fixed_point, gamma, phi0, subtree_gf, varsigma, DerivedParams,
    HTildeExactness, Regime, SeriesClass,
};
use crate::synth::CoefficientField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("the schedule is outside the model (θ = {theta} ≥ 1)")]
    OutOfScope { theta: f64 },
    #[error("ambiguous case split: {0}")]
    Ambiguous(&'static str),
}

/// What is known about `P(Θ = ∅)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EmptinessLaw {
    /// A numerical value with an absolute error bound.
    Exact {
        #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
        value: f64,
        #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
        error_bound: f64,
    },
    /// Strictly between 0 and 1; no closed form.
    StrictlyBetween,
    /// Positive, not known whether equal to 1.
    Positive,
    /// Below one, not known whether positive.
    BelowOne,
    /// No certificate applies.
    Indeterminate { reason: String },
}

impl EmptinessLaw {
    fn exact(v: f64) -> Self {
        EmptinessLaw::Exact {
            value: v,
            error_bound: 0.0,
        }
    }
    pub fn value(&self) -> Option<f64> {
        match self {
            EmptinessLaw::Exact { value, .. } => Some(*value),
            _ => None,
        }
    }
    /// The interval of values compatible with the statement.
    pub fn range(&self) -> (f64, f64) {
        match self {
            EmptinessLaw::Exact { value, error_bound } => {
                ((value - error_bound).max(0.0), (value + error_bound).min(1.0))
            }
            EmptinessLaw::StrictlyBetween => (0.0, 1.0),
            EmptinessLaw::Positive => (0.0, 1.0),
            EmptinessLaw::BelowOne => (0.0, 1.0),
            EmptinessLaw::Indeterminate { .. } => (0.0, 1.0),
        }
    }
}

/// Cap on the level used in truncated products.
const PRODUCT_MAX_LEVEL: usize = 1000;
/// Required bound on the neglected log-tail before reporting a value.
pub const LOG_TAIL_TOLERANCE: f64 = 1e-10;

/// `P(Θ = ∅)`.
pub fn p_theta_empty(s: &KernelSchedule, p: &DerivedParams) -> EmptinessLaw {
    let theta = p.theta.value;
    if theta < 0.0 {
        return EmptinessLaw::exact(1.0);
    }
    if let ExtinctionPattern::ZeroFrom(jstar) = p.extinction {
        // Every state-1 vertex from level j* on has a state-1 child, so Θ is
        // empty iff S_{j*} is empty and no zero is refreshed afterwards.
        let head = phi0(s, jstar);
        if p.eta_series == SeriesClass::Divergent {
            return EmptinessLaw::exact(0.0);
        }
        if head == 0.0 {
            return EmptinessLaw::exact(0.0);
        }
        let mut log_prod = 0.0;
        for j in jstar..=PRODUCT_MAX_LEVEL {
            let e = eta(s, j);
            if e >= 1.0 {
                return EmptinessLaw::exact(0.0);
            }
            log_prod += crate::float::exp2(j as f64) * crate::float::ln1p(-e);
            if let Some(b) = eta_tail_bound(s, j) {
                if b < LOG_TAIL_TOLERANCE {
                    let v = head * crate::float::exp(log_prod);
                    // |e^{-b} − 1| ≤ b.
                    return EmptinessLaw::Exact {
                        value: v,
                        error_bound: v * b,
                    };
                }
            }
        }
        return EmptinessLaw::Indeterminate {
            reason: String::from("refresh tail bound did not reach 1e-10"),
        };
    }
    // ν_{1,j}(00) > 0 infinitely often.
    if let (Some(z), Some(l1)) = (s.eta_zero_from(), s.state_constant_from(true)) {
        // No refreshes from level z on: Θ = ∅ iff S_j is eventually empty,
        // and the tail is a homogeneous Galton–Watson process.
        let l = z.max(l1);
        let q = extinction_fixed_point(&s.kernel_at(l, true));
        let (f0, f1) = subtree_gf(s, 0, l, 1.0, q);
        return EmptinessLaw::exact(s.initial_law * f1 + (1.0 - s.initial_law) * f0);
    }
    let Some(ju) = p.j_under.finite() else {
        return EmptinessLaw::exact(1.0);
    };
    match p.eta_series {
        SeriesClass::Convergent => {
            let vs = p.varsigma.map(|v| v.value).unwrap_or(f64::INFINITY);
            if vs.is_infinite() {
                return EmptinessLaw::exact(1.0);
            }
            // liminf ∏ γ = 0 needs the eventual γ below 1, i.e. θ < 0.
            if let Some(l1) = s.state_constant_from(true) {
                if gamma(s, l1) < 1.0 {
                    return EmptinessLaw::exact(1.0);
                }
            }
            let silent = s.eta_zero_from().is_some_and(|z| z <= ju);
            if silent && phi0(s, ju) == 1.0 {
                return EmptinessLaw::exact(1.0);
            }
            if s.state_constant_from(true).is_some() {
                EmptinessLaw::StrictlyBetween
            } else {
                EmptinessLaw::Positive
            }
        }
        SeriesClass::Divergent => {
            if theta == 0.0 {
                return EmptinessLaw::Indeterminate {
                    reason: String::from("θ = 0 with a divergent refresh series"),
                };
            }
            if let Some(l1) = s.state_constant_from(true) {
                // ς_{j+1} is eventually a finite constant, so
                // Σ 2^j η_j / ς_{j+1} diverges with Σ 2^j η_j.
                match varsigma(s, l1.max(ju), 1e-12) {
                    Ok(v) if v.value.is_finite() => return EmptinessLaw::exact(0.0),
                    _ => return EmptinessLaw::BelowOne,
                }
            }
            if let crate::kernels::KernelFamily::Lacunary(_) = s.family {
                // ς_{j_n} grows like 2^{c j_n} while the refresh mass at
                // j_n − 1 is 2^{c j_n / 2}/j_n: the ratio series converges.
                return EmptinessLaw::StrictlyBetween;
            }
            EmptinessLaw::BelowOne
        }
    }
}

/// `d(h) = h · slope` on a sub-interval of `(ḥ, h̄]`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearPiece {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub lo: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub slope: f64,
}

impl LinearPiece {
    pub fn contains(&self, h: f64) -> bool {
        let above = if self.lo_closed { h >= self.lo } else { h > self.lo };
        let below = if self.hi_closed { h <= self.hi } else { h < self.hi };
        above && below
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointMass {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub value: f64,
}

/// `d(h)` takes one of two values depending on whether Θ is empty.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomPoint {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub if_theta_empty: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub if_theta_nonempty: f64,
}

/// Value of the predicted spectrum at one exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DimensionAt {
    Sure(f64),
    /// `(value if Θ = ∅, value otherwise)`.
    Random(f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectrumPrediction {
    pub regime: Regime,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_low: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_high: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub theta: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h_tilde: f64,
    pub points: Vec<PointMass>,
    pub linear: Option<LinearPiece>,
    pub random_point: Option<RandomPoint>,
    pub p_theta_empty: EmptinessLaw,
    /// `P(d(ḥ) = −∞)`.
    pub p_dim_neg_inf: EmptinessLaw,
    /// Exponent of Lebesgue-almost every point.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub typical_exponent: f64,
    pub notes: Vec<String>,
}

impl SpectrumPrediction {
    pub fn is_random(&self) -> bool {
        self.random_point.is_some()
    }

    pub fn eval(&self, h: f64) -> DimensionAt {
        if let Some(r) = &self.random_point {
            if r.h == h {
                if r.if_theta_empty == r.if_theta_nonempty {
                    return DimensionAt::Sure(r.if_theta_empty);
                }
                return DimensionAt::Random(r.if_theta_empty, r.if_theta_nonempty);
            }
        }
        for p in &self.points {
            if p.h == h {
                return DimensionAt::Sure(p.value);
            }
        }
        if let Some(l) = &self.linear {
            if l.contains(h) {
                // Divide rather than multiply by the slope so that
                // d(h̃) comes out as exactly 1.
                let d = if self.h_tilde.is_infinite() { 0.0 } else { h / self.h_tilde };
                return DimensionAt::Sure(d);
            }
        }
        DimensionAt::Sure(f64::NEG_INFINITY)
    }
}

/// The full case split for a schedule and its derived parameters.
pub fn predict_spectrum(
    s: &KernelSchedule,
    p: &DerivedParams,
) -> Result<SpectrumPrediction, SpectrumError> {
    let theta = p.theta.value;
    if p.regime == Regime::OutOfScope {
        return Err(SpectrumError::OutOfScope { theta });
    }
    let (hl, hh) = (p.h_low, p.h_high);
    let law = p_theta_empty(s, p);
    let mut notes = Vec::new();
    match p.regime {
        Regime::SummableRefresh => {
            let random_point = if theta < 0.0 {
                None
            } else {
                Some(RandomPoint {
                    h: hl,
                    if_theta_empty: f64::NEG_INFINITY,
                    if_theta_nonempty: theta,
                })
            };
            if theta >= 0.0 {
                notes.push(String::from(
                    "d(h_low) is -inf when no infinite line of state-1 vertices survives, theta otherwise",
                ));
            }
            let p_neg = if theta < 0.0 {
                EmptinessLaw::exact(1.0)
            } else {
                law.clone()
            };
            Ok(SpectrumPrediction {
                regime: p.regime,
                h_low: hl,
                h_high: hh,
                theta,
                h_tilde: f64::INFINITY,
                points: alloc::vec![PointMass { h: hh, value: 1.0 }],
                linear: None,
                random_point,
                p_theta_empty: law,
                p_dim_neg_inf: p_neg,
                typical_exponent: hh,
                notes,
            })
        }
        Regime::DivergentRefresh => {
            let ht = p.h_tilde;
            let h_tilde = match ht.exactness {
                HTildeExactness::Exact => ht.lo,
                _ => {
                    if ht.lo < hh && ht.hi >= hh {
                        return Err(SpectrumError::Ambiguous("h_tilde bracket straddles h_high"));
                    }
                    let (a, b) = (hl / ht.hi, hl / ht.lo);
                    if a < theta && b >= theta {
                        return Err(SpectrumError::Ambiguous(
                            "h_low/h_tilde bracket straddles theta",
                        ));
                    }
                    return Err(SpectrumError::Ambiguous("h_tilde is only known as a bracket"));
                }
            };
            let slope = if h_tilde.is_infinite() { 0.0 } else { 1.0 / h_tilde };
            let mut points = Vec::new();
            let linear;
            if h_tilde < hh {
                linear = Some(LinearPiece {
                    lo: hl,
                    hi: h_tilde,
                    lo_closed: false,
                    hi_closed: true,
                    slope,
                });
                points.push(PointMass {
                    h: hh,
                    value: f64::NEG_INFINITY,
                });
                notes.push(String::from(
                    "h_tilde < h_high: every point has exponent at most h_tilde, so d(h_high) = -inf",
                ));
            } else {
                linear = Some(LinearPiece {
                    lo: hl,
                    hi: hh,
                    lo_closed: false,
                    hi_closed: false,
                    slope,
                });
                points.push(PointMass { h: hh, value: 1.0 });
            }
            let base = if h_tilde.is_infinite() { 0.0 } else { hl / h_tilde };
            let random_point = if base >= theta {
                points.push(PointMass { h: hl, value: base });
                None
            } else {
                notes.push(String::from(
                    "d(h_low) is theta when an infinite line of state-1 vertices survives, h_low/h_tilde otherwise",
                ));
                Some(RandomPoint {
                    h: hl,
                    if_theta_empty: base,
                    if_theta_nonempty: theta,
                })
            };
            if h_tilde == hl {
                notes.push(String::from("h_tilde = h_low: every point has exponent h_low"));
            }
            Ok(SpectrumPrediction {
                regime: p.regime,
                h_low: hl,
                h_high: hh,
                theta,
                h_tilde,
                points,
                linear,
                random_point,
                p_theta_empty: law,
                p_dim_neg_inf: EmptinessLaw::exact(0.0),
                typical_exponent: h_tilde.min(hh),
                notes,
            })
        }
        Regime::OutOfScope => unreachable!(),
    }
}

/// One point of the large-deviation spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LdPoint {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub h: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub eps: f64,
    /// `max_{j ∈ [J/2, J]} (1/j) log₂ #{k : 2^{-(h+ε)j} ≤ |C_{j,k}| ≤ 2^{-(h−ε)j}}`,
    /// `−∞` when every count is zero.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_float"))]
    pub value: f64,
}

/// Large-deviation spectrum of a coefficient array over the upper half of
/// its levels.
pub fn large_deviation_spectrum(levels: &[alloc::vec::Vec<f64>], h_grid: &[f64], eps: f64) -> Vec<LdPoint> {
    let depth = levels.len() - 1;
    let lo = (depth / 2).max(1);
    // Per level: sorted exponents −log₂|C| / j.
    let exps: Vec<Vec<f64>> = (lo..=depth)
        .map(|j| {
            let mut e: Vec<f64> = levels[j]
                .iter()
                .map(|c| -log2(c.abs()) / j as f64)
                .collect();
            e.sort_by(|a, b| a.total_cmp(b));
            e
        })
        .collect();
    h_grid
        .iter()
        .map(|&h| {
            let mut best = f64::NEG_INFINITY;
            for (i, e) in exps.iter().enumerate() {
                let j = (lo + i) as f64;
                let a = e.partition_point(|x| *x < h - eps);
                let b = e.partition_point(|x| *x <= h + eps);
                if b > a {
                    best = best.max(log2((b - a) as f64) / j);
                }
            }
            LdPoint { h, eps, value: best }
        })
        .collect()
}

/// [`large_deviation_spectrum`] on a coefficient field.
pub fn large_deviation_field(c: &CoefficientField, h_grid: &[f64], eps: f64) -> Vec<LdPoint> {
    large_deviation_spectrum(c.levels(), h_grid, eps)
}

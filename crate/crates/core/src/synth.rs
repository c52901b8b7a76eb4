//! Wavelet coefficients and sample paths on the torus.
//!
//! The coefficient of vertex `λ = (j, k)` is `2^{-ḥ j}` when `X_λ = 1` and
//! `2^{-h̄ j}` otherwise (`0` for `j ≥ 1` when `h̄ = ∞`). The path is
//! `R = Σ_λ C_λ Ψ_λ` with `Ψ_λ(x) = Σ_{m∈ℤ} ψ(2^j (x − m) − k)` built from a
//! Meyer wavelet `ψ`. Because `ψ̂` is compactly supported, each `Ψ_λ` is a
//! trigonometric polynomial and both synthesis and analysis are exact on a
//! grid fine enough to hold the top frequency.
//!
//! Normalisation: `⟨Ψ_λ, Ψ_λ'⟩ = 2^{-j} δ_{λλ'}`, so the analysis
//! `c_λ = 2^{j} ⟨R, Ψ_λ⟩` returns the synthesis coefficients.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use thiserror::Error;

use crate::fft::{fft, Complex, Direction};
use crate::float::{cos, exp2, sin};
use crate::tree::{words_for_level, TreeSample};

/// Extra dyadic levels the grid must carry beyond the finest coefficient.
pub const GRID_GUARD_LEVELS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("exponents must satisfy 0 < h_low < h_high (got {h_low}, {h_high})")]
    Exponents { h_low: f64, h_high: f64 },
    #[error("grid 2^{grid_exp} cannot resolve level {depth}: need grid_exp >= depth + {GRID_GUARD_LEVELS}")]
    Resolution { grid_exp: usize, depth: usize },
    #[error("coefficient ({level}, {offset}) = {value} violates the uniform bound 2^(-{h_low} j)")]
    Regularity {
        level: usize,
        offset: usize,
        value: f64,
        h_low: f64,
    },
    #[error("fractional order must be non-negative (got {0})")]
    NegativeOrder(f64),
    #[error("grid length {0} is not a power of two")]
    GridLength(usize),
}

/// The only wavelet currently offered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Wavelet {
    /// Meyer wavelet with the degree-7 polynomial transition
    /// `ν(x) = x⁴(35 − 84x + 70x² − 20x³)`.
    Meyer,
}

impl Wavelet {
    pub fn name(&self) -> &'static str {
        match self {
            Wavelet::Meyer => "meyer",
        }
    }

    /// `ψ̂(ξ) = ∫ ψ(x) e^{-iξx} dx`, with phase `e^{-iξ/2}` so that
    /// `ψ(2^j x − k)` is centred on the middle of `[k 2^{-j}, (k+1) 2^{-j})`.
    pub fn hat(&self, xi: f64) -> Complex {
        let a = xi.abs();
        let m = meyer_modulus(a);
        if m == 0.0 {
            return Complex::ZERO;
        }
        Complex::expi(-xi / 2.0).scale(m)
    }

    /// Largest `|n|` with `ψ̂(2π n 2^{-j}) ≠ 0`.
    pub fn max_frequency(&self, j: usize) -> usize {
        // Support |ξ| < 8π/3.
        (4 * (1usize << j)) / 3
    }

    /// `sup_x Σ_k |ψ(x − k)|`, which bounds the sup norm of a level with
    /// unit coefficients.
    pub fn periodic_l1_sup(&self) -> f64 {
        MEYER_PERIODIC_L1_SUP
    }
}

/// `sup_x Σ_k |ψ(x − k)|` for the Meyer wavelet above, rounded up. The sup
/// is 2.0820 (attained at the symmetry centre `x = 1/2`); see the
/// `periodic_l1_bound` test.
pub const MEYER_PERIODIC_L1_SUP: f64 = 2.09;

fn transition(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * x * x * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x * x * x)
    }
}

fn meyer_modulus(a: f64) -> f64 {
    let lo = 2.0 * PI / 3.0;
    let mid = 4.0 * PI / 3.0;
    let hi = 8.0 * PI / 3.0;
    if a <= lo || a >= hi {
        0.0
    } else if a <= mid {
        sin(PI / 2.0 * transition(3.0 * a / (2.0 * PI) - 1.0))
    } else {
        cos(PI / 2.0 * transition(3.0 * a / (4.0 * PI) - 1.0))
    }
}

/// Coefficients `C_{j,k}` for `j = 0..=J`, with the tree bits that chose them.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub h_low: f64,
    pub h_high: f64,
    levels: Vec<Vec<f64>>,
    large: Vec<Vec<u64>>,
    /// Accumulated fractional-integration order, with the unscaled field it
    /// applies to. Rescaling always starts from the unscaled values, so
    /// integrating by `s` then `t` is bit-identical to integrating by `s + t`.
    order: f64,
    origin: Option<Box<Origin>>,
}

#[derive(Clone, Debug, PartialEq)]
struct Origin {
    h_low: f64,
    h_high: f64,
    levels: Vec<Vec<f64>>,
}

/// Magnitude used for a coefficient at level `j` with exponent `h`.
#[inline]
pub fn magnitude(h: f64, j: usize) -> f64 {
    if j == 0 {
        1.0
    } else if h.is_infinite() {
        0.0
    } else {
        exp2(-h * j as f64)
    }
}

/// Builds the coefficient field of a tree.
pub fn coefficients(
    tree: &TreeSample,
    h_low: f64,
    h_high: f64,
) -> Result<CoefficientField, SynthError> {
    if !(h_low > 0.0 && h_low < h_high) {
        return Err(SynthError::Exponents { h_low, h_high });
    }
    let mut levels = Vec::with_capacity(tree.depth() + 1);
    let mut large = Vec::with_capacity(tree.depth() + 1);
    for j in 0..=tree.depth() {
        let (a, b) = (magnitude(h_low, j), magnitude(h_high, j));
        let n = 1usize << j;
        let words = tree.level_words(j);
        let mut v = vec![b; n];
        for k in 0..n {
            if (words[k / 64] >> (k % 64)) & 1 == 1 {
                v[k] = a;
            }
        }
        levels.push(v);
        large.push(words.to_vec());
    }
    Ok(CoefficientField {
        h_low,
        h_high,
        levels,
        large,
        order: 0.0,
        origin: None,
    })
}

impl CoefficientField {
    /// Builds a field from raw per-level values and "large" masks.
    pub fn from_parts(
        h_low: f64,
        h_high: f64,
        levels: Vec<Vec<f64>>,
        large: Vec<Vec<u64>>,
    ) -> Self {
        debug_assert_eq!(levels.len(), large.len());
        CoefficientField {
            h_low,
            h_high,
            levels,
            large,
            order: 0.0,
            origin: None,
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j]
    }
    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }
    /// Whether `C_{j,k}` is the large value `2^{-ḥ j}` (state 1).
    #[inline]
    pub fn is_large(&self, j: usize, k: u64) -> bool {
        (self.large[j][(k / 64) as usize] >> (k % 64)) & 1 == 1
    }
    pub fn large_words(&self, j: usize) -> &[u64] {
        &self.large[j]
    }

    /// Offsets of the large coefficients at level `j`.
    pub fn large_offsets(&self, j: usize) -> Vec<u64> {
        let mut out = Vec::new();
        for (wi, &w) in self.large[j].iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push(wi as u64 * 64 + w.trailing_zeros() as u64);
                w &= w - 1;
            }
        }
        out
    }

    /// Offsets of the large coefficients at level `j ≥ 1` whose father is
    /// small.
    pub fn fresh_offsets(&self, j: usize) -> Vec<u64> {
        if j == 0 {
            return Vec::new();
        }
        self.large_offsets(j)
            .into_iter()
            .filter(|&k| !self.is_large(j - 1, k / 2))
            .collect()
    }

    /// Every coefficient multiplied by `2^{-t j}`; exponents shift by `t`.
    pub fn fractional_integrate(&self, t: f64) -> Result<CoefficientField, SynthError> {
        if !(t >= 0.0) {
            return Err(SynthError::NegativeOrder(t));
        }
        let origin = match &self.origin {
            Some(o) => o.clone(),
            None => Box::new(Origin {
                h_low: self.h_low,
                h_high: self.h_high,
                levels: self.levels.clone(),
            }),
        };
        let order = self.order + t;
        let levels = origin
            .levels
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let f = exp2(-order * j as f64);
                v.iter().map(|c| c * f).collect()
            })
            .collect();
        Ok(CoefficientField {
            h_low: origin.h_low + order,
            h_high: origin.h_high + order,
            levels,
            large: self.large.clone(),
            order,
            origin: Some(origin),
        })
    }

    /// Total fractional-integration order applied so far.
    pub fn order(&self) -> f64 {
        self.order
    }

    /// Checks `|C_{j,k}| ≤ 2^{-ḥ j}` (relative slack 1e-12).
    pub fn check_regularity(&self) -> Result<(), SynthError> {
        for (j, v) in self.levels.iter().enumerate() {
            let bound = magnitude(self.h_low, j) * (1.0 + 1e-12);
            for (k, c) in v.iter().enumerate() {
                if !c.is_finite() || c.abs() > bound {
                    return Err(SynthError::Regularity {
                        level: j,
                        offset: k,
                        value: *c,
                        h_low: self.h_low,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Free-standing form of [`CoefficientField::fractional_integrate`].
pub fn fractional_integrate(c: &CoefficientField, t: f64) -> Result<CoefficientField, SynthError> {
    c.fractional_integrate(t)
}

/// Values of `R` on the grid `x_l = l / N`, `N = 2^grid_exp`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    pub grid_exp: usize,
    pub depth: usize,
    pub h_low: f64,
    pub h_high: f64,
    pub wavelet: Wavelet,
    /// Sup-norm bound on the omitted levels `j > depth`.
    pub truncation_bound: f64,
    pub values: Vec<f64>,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sup-norm bound for `Σ_{j>J} Σ_k 2^{-ḥ j} |Ψ_{j,k}|`.
pub fn truncation_bound(wavelet: Wavelet, h_low: f64, depth: usize) -> f64 {
    let r = exp2(-h_low);
    wavelet.periodic_l1_sup() * exp2(-h_low * (depth + 1) as f64) / (1.0 - r)
}

/// Spectrum `R̂(n)`, `n ∈ (−N/2, N/2]` stored FFT-style, of `Σ C_λ Ψ_λ`.
fn spectrum_of(levels: &[Vec<f64>], wavelet: Wavelet, n_grid: usize) -> Vec<Complex> {
    let mut freq = vec![Complex::ZERO; n_grid];
    for (j, coeffs) in levels.iter().enumerate() {
        let len = 1usize << j;
        let mut d: Vec<Complex> = coeffs.iter().map(|&c| Complex::new(c, 0.0)).collect();
        fft(&mut d, Direction::Forward);
        let scale = exp2(-(j as f64));
        let nmax = wavelet.max_frequency(j) as i64;
        for n in -nmax..=nmax {
            let h = wavelet.hat(2.0 * PI * n as f64 / len as f64);
            if h == Complex::ZERO {
                continue;
            }
            let m = n.rem_euclid(len as i64) as usize;
            let slot = n.rem_euclid(n_grid as i64) as usize;
            freq[slot] += (h * d[m]).scale(scale);
        }
    }
    freq
}

/// `R` on `N = 2^grid_exp` points. Requires `grid_exp ≥ J + 4`.
pub fn synthesize(
    c: &CoefficientField,
    wavelet: Wavelet,
    grid_exp: usize,
) -> Result<SamplePath, SynthError> {
    let depth = c.depth();
    if grid_exp < depth + GRID_GUARD_LEVELS {
        return Err(SynthError::Resolution { grid_exp, depth });
    }
    c.check_regularity()?;
    let n = 1usize << grid_exp;
    let mut freq = spectrum_of(c.levels(), wavelet, n);
    // TODO: the output is real; packing two half-length transforms would
    // halve synthesis time on 2^22-point and larger grids.
    fft(&mut freq, Direction::Inverse);
    Ok(SamplePath {
        grid_exp,
        depth,
        h_low: c.h_low,
        h_high: c.h_high,
        wavelet,
        truncation_bound: truncation_bound(wavelet, c.h_low, depth),
        values: freq.iter().map(|z| z.re).collect(),
    })
}

/// Coefficients `c_{j,k} = 2^{j} ⟨R, Ψ_{j,k}⟩` for `j = 0..=depth`.
pub fn analyze(
    values: &[f64],
    wavelet: Wavelet,
    depth: usize,
) -> Result<Vec<Vec<f64>>, SynthError> {
    let n = values.len();
    if !n.is_power_of_two() {
        return Err(SynthError::GridLength(n));
    }
    let grid_exp = n.trailing_zeros() as usize;
    if grid_exp < depth + GRID_GUARD_LEVELS {
        return Err(SynthError::Resolution { grid_exp, depth });
    }
    let mut freq: Vec<Complex> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft(&mut freq, Direction::Forward);
    let inv_n = 1.0 / n as f64;
    let mut out = Vec::with_capacity(depth + 1);
    for j in 0..=depth {
        let len = 1usize << j;
        let mut e = vec![Complex::ZERO; len];
        let nmax = wavelet.max_frequency(j) as i64;
        for f in -nmax..=nmax {
            let h = wavelet.hat(2.0 * PI * f as f64 / len as f64);
            if h == Complex::ZERO {
                continue;
            }
            let r = freq[f.rem_euclid(n as i64) as usize].scale(inv_n);
            e[f.rem_euclid(len as i64) as usize] += r * h.conj();
        }
        fft(&mut e, Direction::Inverse);
        out.push(e.iter().map(|z| z.re).collect());
    }
    Ok(out)
}

/// Values of a single periodised `Ψ_{j,k}` on `2^grid_exp` points (for
/// inspection and tests).
pub fn basis_function(wavelet: Wavelet, j: usize, k: usize, grid_exp: usize) -> Vec<f64> {
    let mut levels: Vec<Vec<f64>> = (0..=j).map(|l| vec![0.0; 1 << l]).collect();
    levels[j][k] = 1.0;
    let n = 1usize << grid_exp;
    let mut freq = spectrum_of(&levels, wavelet, n);
    fft(&mut freq, Direction::Inverse);
    freq.iter().map(|z| z.re).collect()
}

/// Number of words of a level mask (re-exported for readers of fields).
pub fn mask_words(j: usize) -> usize {
    words_for_level(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelSchedule, Sequence};
    use crate::tree::sample_tree;

    fn field(depth: usize, seed: u64) -> CoefficientField {
        let s = KernelSchedule::product_bernoulli(Sequence::Constant(0.6), Sequence::Constant(0.1))
            .unwrap();
        let t = sample_tree(&s, depth, seed).unwrap();
        coefficients(&t, 0.5, 1.5).unwrap()
    }

    #[test]
    fn level_three_large_value() {
        assert!((magnitude(0.5, 3) - 0.353_553_390_593_273_8).abs() < 1e-15);
        assert_eq!(magnitude(f64::INFINITY, 3), 0.0);
        assert_eq!(magnitude(f64::INFINITY, 0), 1.0);
    }

    #[test]
    fn partition_of_unity_in_frequency() {
        let w = Wavelet::Meyer;
        for n in 1..200 {
            let xi = 2.0 * PI * n as f64;
            let mut s = 0.0;
            for j in 0..12 {
                s += w.hat(xi / (1u64 << j) as f64).norm_sqr();
            }
            assert!((s - 1.0).abs() < 1e-12, "n={n} s={s}");
        }
    }

    #[test]
    fn round_trip_small() {
        let c = field(7, 5);
        let p = synthesize(&c, Wavelet::Meyer, 11).unwrap();
        let back = analyze(&p.values, Wavelet::Meyer, 7).unwrap();
        for j in 0..=7 {
            for k in 0..1 << j {
                assert!((back[j][k] - c.level(j)[k]).abs() < 1e-12, "({j},{k})");
            }
        }
        let mean: f64 = p.values.iter().sum::<f64>() / p.len() as f64;
        let max = p.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(mean.abs() <= 1e-8 * max);
    }

    #[test]
    fn resolution_is_enforced() {
        let c = field(7, 5);
        assert!(matches!(
            synthesize(&c, Wavelet::Meyer, 10),
            Err(SynthError::Resolution { .. })
        ));
        let v = vec![0.0; 1 << 10];
        assert!(analyze(&v, Wavelet::Meyer, 7).is_err());
    }

    #[test]
    fn basis_is_centred_and_normalised() {
        let g = 12;
        let psi = basis_function(Wavelet::Meyer, 4, 3, g);
        let n = psi.len() as f64;
        let norm2: f64 = psi.iter().map(|v| v * v).sum::<f64>() / n;
        assert!((norm2 - 1.0 / 16.0).abs() < 1e-12);
        let (imax, _) = psi
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |a, (i, v)| if v.abs() > a.1 { (i, v.abs()) } else { a });
        let centre = (3.0 + 0.5) / 16.0;
        assert!((imax as f64 / n - centre).abs() < 1.0 / 64.0);
    }

    #[test]
    fn periodic_l1_bound() {
        // Ψ at a deep level is ψ(2^j x) near 0; fold it to one period.
        let j = 8;
        let g = 16;
        let psi = basis_function(Wavelet::Meyer, j, 0, g);
        let per = 1usize << (g - j);
        let mut best = 0.0f64;
        for r in 0..per {
            let s: f64 = (0..1usize << j).map(|k| psi[(k * per + r) % psi.len()].abs()).sum();
            best = best.max(s);
        }
        assert!(best <= MEYER_PERIODIC_L1_SUP, "{best}");
        assert!(best > 2.08);
    }

    #[test]
    fn negative_order_rejected() {
        assert!(field(4, 1).fractional_integrate(-0.1).is_err());
    }

    #[test]
    fn integration_orders_compose() {
        let c = field(6, 2);
        // 0.1 + 0.2 != 0.3 in floating point, the classic trap.
        let two = c.fractional_integrate(0.1).unwrap().fractional_integrate(0.2).unwrap();
        let one = c.fractional_integrate(0.1 + 0.2).unwrap();
        assert_eq!(two, one);
        assert_eq!(two.level(6)[0], c.level(6)[0] * exp2(-(0.1 + 0.2) * 6.0));
    }
}

//! Core of `treewave`: random wavelet series whose large coefficients are
//! selected by a binary-tree-indexed Markov chain with level-dependent
//! kernels, together with the closed-form multifractal predictions and the
//! finite-depth estimators used to check them.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is
//! deterministic given a seed; parallel drivers, file formats and the
//! command line live in the `treewave` crate.
//!
//! Module map:
//!
//! * [`kernels`] — pair distributions and level schedules.
//! * [`params`] — γ, η, θ, ς, h̃ and the extinction generating function.
//! * [`tree`] — counter-based sampling of the chain on the dyadic tree.
//! * [`synth`] — coefficient fields, periodized Meyer synthesis/analysis.
//! * [`spectrum`] — predicted singularity spectrum and emptiness laws.
//! * [`analysis`] — pointwise Hölder estimates, limsup sets, box counts,
//!   the nested-interval point construction.
//! * [`mc`] — Monte Carlo estimators with exact oracles.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod analysis;
pub mod fft;
pub(crate) mod float;
pub mod kernels;
pub mod mc;
pub mod params;
#[cfg(feature = "serde")]
mod serde_float;
pub mod spectrum;
pub mod stats;
pub mod synth;
pub mod tree;

pub use kernels::{KernelFamily, KernelSchedule, PairDistribution, Sequence};
pub use params::DerivedParams;
pub use tree::{TreeSample, VertexIndex};

//! Sampling the chain on the dyadic tree.
//!
//! Vertex `(j, k)` with `0 ≤ k < 2^j` indexes the dyadic interval
//! `[k 2^{-j}, (k+1) 2^{-j})`; its father is `(j−1, ⌊k/2⌋)`. States are
//! stored bit-packed per level, least significant bit first.
//!
//! Randomness is counter based: the children of `(j, k)` are decided by the
//! 64-bit word at position `k` of the ChaCha8 stream `j` keyed by the seed.
//! A vertex's draw therefore depends only on `(seed, j, k)`, which makes
//! samples independent of evaluation order and chunking, and makes a
//! subtree's law depend only on the state of its root.

use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernels::KernelSchedule;

/// Default maximum depth (2^27 bits ≈ 16 MiB).
pub const DEFAULT_DEPTH_CAP: usize = 26;

/// Stream used for the root's state.
const ROOT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("depth {depth} exceeds the cap {cap}")]
    DepthCap { depth: usize, cap: usize },
    #[error("vertex ({level}, {offset}) is outside the sampled tree")]
    OutOfRange { level: usize, offset: u64 },
    #[error("level {level} has {got} words, expected {expected}")]
    Shape {
        level: usize,
        got: usize,
        expected: usize,
    },
}

/// Vertex `(j, k)` of the dyadic tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VertexIndex {
    pub level: u32,
    pub offset: u64,
}

impl VertexIndex {
    pub const ROOT: VertexIndex = VertexIndex {
        level: 0,
        offset: 0,
    };

    pub fn new(level: u32, offset: u64) -> Self {
        VertexIndex { level, offset }
    }

    pub fn father(self) -> Option<VertexIndex> {
        (self.level > 0).then(|| VertexIndex::new(self.level - 1, self.offset >> 1))
    }

    pub fn children(self) -> [VertexIndex; 2] {
        let l = self.level + 1;
        [
            VertexIndex::new(l, 2 * self.offset),
            VertexIndex::new(l, 2 * self.offset + 1),
        ]
    }

    /// Left endpoint `x_u = k 2^{-j}` of the vertex's dyadic interval.
    pub fn left_endpoint(self) -> f64 {
        self.offset as f64 * crate::float::exp2(-(self.level as f64))
    }

    /// Whether `other` lies in the subtree rooted here (inclusive).
    pub fn is_ancestor_of(self, other: VertexIndex) -> bool {
        other.level >= self.level && (other.offset >> (other.level - self.level)) == self.offset
    }
}

/// Number of 64-bit words holding level `j`.
#[inline]
pub fn words_for_level(j: usize) -> usize {
    if j < 6 {
        1
    } else {
        1 << (j - 6)
    }
}

/// One realisation of the chain down to level `depth`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeSample {
    depth: usize,
    seed: u64,
    fingerprint: [u8; 16],
    levels: Vec<Vec<u64>>,
}

fn level_rng(seed: u64, stream: u64, word_pos: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // Each draw consumes two 32-bit words.
    rng.set_word_pos(2 * word_pos as u128);
    rng
}

#[inline]
fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// State of the root for a given seed.
pub fn sample_root(s: &KernelSchedule, seed: u64) -> bool {
    if s.initial_law >= 1.0 {
        return true;
    }
    if s.initial_law <= 0.0 {
        return false;
    }
    let mut rng = level_rng(seed, ROOT_STREAM, 0);
    unit(rng.next_u64()) < s.initial_law
}

/// Fills the children of parents `[64·w0, 64·w1)` of level `j` (clipped to
/// `2^j`) into `out`, which holds child-level words starting at word `2·w0`
/// (or the single child word when `j < 6`).
pub fn fill_children(
    s: &KernelSchedule,
    seed: u64,
    j: usize,
    parents: &[u64],
    w0: usize,
    w1: usize,
    out: &mut [u64],
) {
    let k0 = w0 as u64 * 64;
    let k1 = ((w1 as u64) * 64).min(1u64 << j);
    let nu0 = s.kernel_at(j, false);
    let nu1 = s.kernel_at(j, true);
    let d0 = nu0.degenerate();
    let d1 = nu1.degenerate();
    let mut rng = if d0.is_some() && d1.is_some() {
        None
    } else {
        Some(level_rng(seed, j as u64, k0))
    };
    let child_base = 2 * k0;
    for w in out.iter_mut() {
        *w = 0;
    }
    for k in k0..k1 {
        let u = match rng.as_mut() {
            Some(r) => unit(r.next_u64()),
            None => 0.0,
        };
        let parent = (parents[(k / 64) as usize] >> (k % 64)) & 1 == 1;
        let (l, r) = match (parent, d0, d1) {
            (false, Some(d), _) => d,
            (true, _, Some(d)) => d,
            (false, None, _) => nu0.sample(u),
            (true, _, None) => nu1.sample(u),
        };
        let c = 2 * k - child_base;
        if l {
            out[(c / 64) as usize] |= 1 << (c % 64);
        }
        if r {
            out[((c + 1) / 64) as usize] |= 1 << ((c + 1) % 64);
        }
    }
}

/// Samples the chain to level `depth` (sequentially).
pub fn sample_tree(s: &KernelSchedule, depth: usize, seed: u64) -> Result<TreeSample, TreeError> {
    sample_tree_capped(s, depth, seed, DEFAULT_DEPTH_CAP)
}

pub fn sample_tree_capped(
    s: &KernelSchedule,
    depth: usize,
    seed: u64,
    cap: usize,
) -> Result<TreeSample, TreeError> {
    if depth > cap {
        return Err(TreeError::DepthCap { depth, cap });
    }
    let mut levels = Vec::with_capacity(depth + 1);
    levels.push(vec![sample_root(s, seed) as u64]);
    for j in 0..depth {
        let mut next = vec![0u64; words_for_level(j + 1)];
        let pw = words_for_level(j);
        fill_children(s, seed, j, &levels[j], 0, pw, &mut next);
        levels.push(next);
    }
    Ok(TreeSample {
        depth,
        seed,
        fingerprint: s.fingerprint(),
        levels,
    })
}

/// Terminal run of state-1 vertices ending at a deepest-level vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverInterval {
    /// Offset at the cover level.
    pub offset: u64,
    /// Number of consecutive state-1 vertices on the ancestor line, the
    /// vertex itself included.
    pub run_length: u32,
}

impl TreeSample {
    /// Assembles a sample from raw level words (used by file readers).
    pub fn from_parts(
        depth: usize,
        seed: u64,
        fingerprint: [u8; 16],
        levels: Vec<Vec<u64>>,
    ) -> Result<Self, TreeError> {
        if levels.len() != depth + 1 {
            return Err(TreeError::Shape {
                level: levels.len(),
                got: 0,
                expected: 0,
            });
        }
        for (j, l) in levels.iter().enumerate() {
            if l.len() != words_for_level(j) {
                return Err(TreeError::Shape {
                    level: j,
                    got: l.len(),
                    expected: words_for_level(j),
                });
            }
            if j < 6 && l[0] >> (1u32 << j) != 0 {
                return Err(TreeError::Shape {
                    level: j,
                    got: l.len(),
                    expected: words_for_level(j),
                });
            }
        }
        Ok(TreeSample {
            depth,
            seed,
            fingerprint,
            levels,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn fingerprint(&self) -> [u8; 16] {
        self.fingerprint
    }
    pub fn level_words(&self, j: usize) -> &[u64] {
        &self.levels[j]
    }

    #[inline]
    pub fn state(&self, j: usize, k: u64) -> bool {
        (self.levels[j][(k / 64) as usize] >> (k % 64)) & 1 == 1
    }

    pub fn state_at(&self, v: VertexIndex) -> Result<bool, TreeError> {
        let j = v.level as usize;
        if j > self.depth || v.offset >> j != 0 {
            return Err(TreeError::OutOfRange {
                level: j,
                offset: v.offset,
            });
        }
        Ok(self.state(j, v.offset))
    }

    /// `#S_j`.
    pub fn count_ones(&self, j: usize) -> u64 {
        self.levels[j].iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Offsets of `S_j`, increasing.
    pub fn level_ones(&self, j: usize) -> Vec<u64> {
        let mut out = Vec::new();
        for (wi, &w) in self.levels[j].iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let b = w.trailing_zeros() as u64;
                out.push(wi as u64 * 64 + b);
                w &= w - 1;
            }
        }
        out
    }

    /// Word `wi` of the "fresh" mask at level `j ≥ 1`: state 1 with father 0.
    #[inline]
    fn fresh_word(&self, j: usize, wi: usize) -> u64 {
        let w = self.levels[j][wi];
        if w == 0 {
            return 0;
        }
        let fathers = if j < 6 {
            spread(self.levels[j - 1][0])
        } else {
            let pw = self.levels[j - 1][wi / 2];
            spread(if wi % 2 == 0 { pw & 0xffff_ffff } else { pw >> 32 })
        };
        w & !fathers
    }

    /// Offsets of `S̃_j`, the state-1 vertices whose father is in state 0.
    /// The root is never fresh.
    pub fn fresh_ones(&self, j: usize) -> Vec<u64> {
        let mut out = Vec::new();
        if j == 0 {
            return out;
        }
        for wi in 0..self.levels[j].len() {
            let mut w = self.fresh_word(j, wi);
            while w != 0 {
                let b = w.trailing_zeros() as u64;
                out.push(wi as u64 * 64 + b);
                w &= w - 1;
            }
        }
        out
    }

    /// `#S̃_j`.
    pub fn count_fresh(&self, j: usize) -> u64 {
        if j == 0 {
            return 0;
        }
        (0..self.levels[j].len())
            .map(|wi| self.fresh_word(j, wi).count_ones() as u64)
            .sum()
    }

    /// Level-`j` cover of the limit set of infinite state-1 lines: the
    /// state-1 vertices at level `j`, each tagged with the length of its
    /// terminal run of state-1 ancestors.
    pub fn theta_cover(&self, j: usize) -> Vec<CoverInterval> {
        self.level_ones(j)
            .into_iter()
            .map(|k| {
                let mut run = 1u32;
                let (mut l, mut o) = (j, k);
                while l > 0 && self.state(l - 1, o >> 1) {
                    run += 1;
                    l -= 1;
                    o >>= 1;
                }
                CoverInterval {
                    offset: k,
                    run_length: run,
                }
            })
            .collect()
    }

    /// Whether the state-1 line subtree rooted at `u` (state-1 vertices
    /// connected to `u` through state-1 fathers) reaches level `to`.
    pub fn subtree_reaches(&self, u: VertexIndex, to: usize) -> bool {
        let j = u.level as usize;
        if to > self.depth || j > to || !self.state(j, u.offset) {
            return false;
        }
        let mut frontier = vec![u.offset];
        for l in j + 1..=to {
            let mut next = Vec::new();
            for &k in &frontier {
                for c in [2 * k, 2 * k + 1] {
                    if self.state(l, c) {
                        next.push(c);
                    }
                }
            }
            if next.is_empty() {
                return false;
            }
            frontier = next;
        }
        true
    }
}

/// Duplicates each of the low 32 bits of `x` into two adjacent bits.
#[inline]
fn spread(x: u64) -> u64 {
    let mut x = x & 0xffff_ffff;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x | (x << 1)
}

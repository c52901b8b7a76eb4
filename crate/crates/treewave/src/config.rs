//! Run configuration. One TOML file drives every subcommand:
//!
//! ```toml
//! [model]
//! h_low = 0.5
//! h_high = "inf"        # or a number
//! initial_law = 1.0     # optional, default 1
//!
//! [schedule]
//! family = "product-bernoulli"
//! p = 0.25
//! q = { scale = 0.5, rate = 0.5 }
//!
//! [run]
//! depth = 16
//! grid_exp = 20
//! seed = 1
//! holder_grid_exp = 16 # optional, grid of the Hölder field
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;
use treewave_core::kernels::KernelError;
use treewave_core::synth::GRID_GUARD_LEVELS;
use treewave_core::tree::DEFAULT_DEPTH_CAP;
use treewave_core::{KernelSchedule, PairDistribution, Sequence};

/// Environment variable overriding the depth cap.
pub const DEPTH_CAP_ENV: &str = "TREEWAVE_DEPTH_CAP";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Domain { field: &'static str, reason: String },
    #[error("schedule.rows line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error("schedule: {0}")]
    Kernel(#[from] KernelError),
}

fn domain(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Domain {
        field,
        reason: reason.into(),
    }
}

/// The depth cap: [`DEPTH_CAP_ENV`] if set to an integer, else 26.
pub fn depth_cap() -> usize {
    std::env::var(DEPTH_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_DEPTH_CAP)
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub schedule: ScheduleSpec,
    pub run: RunSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub h_low: f64,
    #[serde(deserialize_with = "exponent_de", serialize_with = "exponent_ser")]
    pub h_high: f64,
    #[serde(default = "one")]
    pub initial_law: f64,
}

fn one() -> f64 {
    1.0
}

fn exponent_de<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tok(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Tok(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Tok(t) => Err(serde::de::Error::custom(format!(
            "expected a number or \"inf\", got \"{t}\""
        ))),
    }
}

fn exponent_ser<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// The same pair distributions at every level, as `[p00, p01, p10, p11]`.
    Constant { nu0: [f64; 4], nu1: [f64; 4] },
    /// Lines `j state p00 p01 p10 p11`; missing levels inherit the
    /// previous row, the last row repeats.
    Table { rows: String },
    /// Independent children: state 1 with probability `p_j` under a
    /// state-1 parent and `q_j` under a state-0 parent.
    ProductBernoulli { p: SeqSpec, q: SeqSpec },
    /// Lacunary refresh schedule with parameters `a ∈ (0, 1)`, integer `b ≥ 2`.
    Lacunary { a: f64, b: u32 },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum SeqSpec {
    Constant(f64),
    Table(Vec<f64>),
    /// `min(1, scale·(j+1)^poly·2^{-rate·j})`.
    Geometric {
        scale: f64,
        rate: f64,
        #[serde(default)]
        poly: f64,
    },
}

impl SeqSpec {
    fn to_sequence(&self) -> Sequence {
        match self {
            SeqSpec::Constant(v) => Sequence::Constant(*v),
            SeqSpec::Table(t) => Sequence::Table(t.clone()),
            SeqSpec::Geometric { scale, rate, poly } => Sequence::Geometric {
                scale: *scale,
                rate: *rate,
                poly: *poly,
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub depth: usize,
    pub grid_exp: usize,
    pub seed: u64,
    /// Start of the estimator window; default `⌈J/2⌉`.
    pub j_min: Option<usize>,
    /// Stand-in for `h̄ = ∞` in the Hölder estimator; default `8ḥ`.
    pub probe_ceiling: Option<f64>,
    /// Grid of the Hölder field in `analyze`; default `grid_exp`. Level-set
    /// slopes drift towards 1 on grids much finer than `2^{-J}`.
    pub holder_grid_exp: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub schedule: KernelSchedule,
    pub h_low: f64,
    pub h_high: f64,
    pub depth: usize,
    pub grid_exp: usize,
    pub holder_grid_exp: usize,
    pub seed: u64,
    pub j_min: usize,
    pub probe_ceiling: f64,
    pub output_dir: PathBuf,
    /// Hex SHA-256 (first 16 bytes) of the configuration text.
    pub fingerprint: String,
}

pub fn parse_rows(text: &str) -> Result<Vec<(usize, u8, PairDistribution)>, ConfigError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| ConfigError::Row { line: i + 1, reason };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields `j state p00 p01 p10 p11`, got {}", f.len())));
        }
        let j: usize = f[0].parse().map_err(|e| bad(format!("level: {e}")))?;
        let state: u8 = f[1].parse().map_err(|e| bad(format!("state: {e}")))?;
        let mut p = [0.0; 4];
        for (k, v) in f[2..].iter().enumerate() {
            p[k] = v.parse().map_err(|e| bad(format!("probability {}: {e}", k + 1)))?;
        }
        let d = PairDistribution::new(p[0], p[1], p[2], p[3]).map_err(|e| bad(e.to_string()))?;
        rows.push((j, state, d));
    }
    if rows.is_empty() {
        return Err(ConfigError::Row {
            line: 0,
            reason: "no rows".into(),
        });
    }
    Ok(rows)
}

impl ScheduleSpec {
    pub fn build(&self, initial_law: f64) -> Result<KernelSchedule, ConfigError> {
        let pair = |a: &[f64; 4]| PairDistribution::new(a[0], a[1], a[2], a[3]);
        let s = match self {
            ScheduleSpec::Constant { nu0, nu1 } => KernelSchedule::constant(pair(nu0)?, pair(nu1)?)?,
            ScheduleSpec::Table { rows } => KernelSchedule::from_rows(&parse_rows(rows)?, initial_law)?,
            ScheduleSpec::ProductBernoulli { p, q } => {
                KernelSchedule::product_bernoulli(p.to_sequence(), q.to_sequence())?
            }
            ScheduleSpec::Lacunary { a, b } => KernelSchedule::lacunary(*a, *b)?,
        };
        Ok(s.with_initial_law(initial_law)?)
    }
}

/// Parses and validates a configuration against the environment's depth cap.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_cap(text, depth_cap())
}

pub fn parse_config_with_cap(text: &str, cap: usize) -> Result<RunConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let m = &file.model;
    let r = &file.run;
    if !(m.h_low > 0.0 && m.h_low.is_finite()) {
        return Err(domain("model.h_low", format!("must be a positive number, got {}", m.h_low)));
    }
    if !(m.h_low < m.h_high) {
        return Err(domain(
            "model.h_high",
            format!("need 0 < h_low < h_high, got h_low = {} ≥ h_high = {}", m.h_low, m.h_high),
        ));
    }
    if r.depth < 2 {
        return Err(domain("run.depth", format!("must be at least 2, got {}", r.depth)));
    }
    if r.depth > cap {
        return Err(domain(
            "run.depth",
            format!("{} exceeds the depth cap {cap} (set {DEPTH_CAP_ENV} to raise it)", r.depth),
        ));
    }
    if r.grid_exp < r.depth + GRID_GUARD_LEVELS {
        return Err(domain(
            "run.grid_exp",
            format!("need grid_exp ≥ depth + {GRID_GUARD_LEVELS}, got {} < {}", r.grid_exp, r.depth + GRID_GUARD_LEVELS),
        ));
    }
    if r.grid_exp > 30 {
        return Err(domain("run.grid_exp", format!("at most 30, got {}", r.grid_exp)));
    }
    let holder_grid_exp = r.holder_grid_exp.unwrap_or(r.grid_exp);
    if !(1..=30).contains(&holder_grid_exp) {
        return Err(domain("run.holder_grid_exp", format!("need 1 ≤ holder_grid_exp ≤ 30, got {holder_grid_exp}")));
    }
    let j_min = r.j_min.unwrap_or_else(|| treewave_core::analysis::default_j_min(r.depth));
    if j_min < 1 || j_min > r.depth {
        return Err(domain("run.j_min", format!("need 1 ≤ j_min ≤ depth, got {j_min}")));
    }
    let probe_ceiling = r
        .probe_ceiling
        .unwrap_or(treewave_core::analysis::DEFAULT_CEILING_FACTOR * m.h_low);
    if !(probe_ceiling > m.h_low && probe_ceiling.is_finite()) {
        return Err(domain("run.probe_ceiling", format!("must be finite and exceed h_low, got {probe_ceiling}")));
    }
    let schedule = file.schedule.build(m.initial_law)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(RunConfig {
        schedule,
        h_low: m.h_low,
        h_high: m.h_high,
        depth: r.depth,
        grid_exp: r.grid_exp,
        holder_grid_exp,
        seed: r.seed,
        j_min,
        probe_ceiling,
        output_dir: r.output_dir.clone(),
        fingerprint: hex(&digest[..16]),
        file,
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

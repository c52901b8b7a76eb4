//! On-disk formats.
//!
//! Tree file (`.hmtt`), all integers little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `HMTT`                              |
//! | 1     | version (1)                               |
//! | 1     | depth `J`                                 |
//! | 8     | seed                                      |
//! | 16    | schedule fingerprint                      |
//! | ⌈(2^{J+1}−1)/8⌉ | states, bit `2^j − 1 + k` is vertex `(j, k)`, LSB first |
//!
//! Paths are raw little-endian `f64` with a JSON sidecar, or CSV
//! `x,value` with 17 significant digits.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use treewave_core::synth::{SamplePath, Wavelet};
use treewave_core::tree::words_for_level;
use treewave_core::TreeSample;

pub const TREE_MAGIC: [u8; 4] = *b"HMTT";
pub const TREE_VERSION: u8 = 1;
const HEADER_LEN: usize = 30;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a tree file (bad magic)")]
    Magic,
    #[error("unsupported tree file version {0}")]
    Version(u8),
    #[error("tree file truncated: {got} bytes, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("tree file has nonzero padding bits")]
    Padding,
    #[error("tree: {0}")]
    Tree(#[from] treewave_core::tree::TreeError),
    #[error("path file: {0}")]
    Path(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn tree_bits(depth: usize) -> usize {
    (1usize << (depth + 1)) - 1
}

pub fn encode_tree(t: &TreeSample) -> Vec<u8> {
    let depth = t.depth();
    let nbits = tree_bits(depth);
    let mut out = Vec::with_capacity(HEADER_LEN + nbits.div_ceil(8));
    out.extend_from_slice(&TREE_MAGIC);
    out.push(TREE_VERSION);
    out.push(depth as u8);
    out.extend_from_slice(&t.seed().to_le_bytes());
    out.extend_from_slice(&t.fingerprint());
    let mut body = vec![0u8; nbits.div_ceil(8)];
    for j in 0..=depth {
        let base = (1usize << j) - 1;
        for (w, &word) in t.level_words(j).iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let g = base + 64 * w + b;
                body[g / 8] |= 1 << (g % 8);
            }
        }
    }
    out.extend_from_slice(&body);
    out
}

pub fn decode_tree(bytes: &[u8]) -> Result<TreeSample, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Length {
            got: bytes.len(),
            expected: HEADER_LEN,
        });
    }
    if bytes[..4] != TREE_MAGIC {
        return Err(FormatError::Magic);
    }
    if bytes[4] != TREE_VERSION {
        return Err(FormatError::Version(bytes[4]));
    }
    let depth = bytes[5] as usize;
    if depth > 40 {
        return Err(FormatError::Length {
            got: bytes.len(),
            expected: usize::MAX,
        });
    }
    let seed = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let fingerprint: [u8; 16] = bytes[14..30].try_into().expect("16 bytes");
    let nbits = tree_bits(depth);
    let expected = HEADER_LEN + nbits.div_ceil(8);
    if bytes.len() != expected {
        return Err(FormatError::Length {
            got: bytes.len(),
            expected,
        });
    }
    let body = &bytes[HEADER_LEN..];
    if nbits % 8 != 0 && body[body.len() - 1] >> (nbits % 8) != 0 {
        return Err(FormatError::Padding);
    }
    let mut levels = Vec::with_capacity(depth + 1);
    for j in 0..=depth {
        let base = (1usize << j) - 1;
        let mut words = vec![0u64; words_for_level(j)];
        for k in 0..(1usize << j) {
            let g = base + k;
            if body[g / 8] >> (g % 8) & 1 == 1 {
                words[k / 64] |= 1 << (k % 64);
            }
        }
        levels.push(words);
    }
    Ok(TreeSample::from_parts(depth, seed, fingerprint, levels)?)
}

pub fn write_tree(path: &Path, t: &TreeSample) -> Result<(), FormatError> {
    fs::write(path, encode_tree(t)).map_err(io_err(path))
}

pub fn read_tree(path: &Path) -> Result<TreeSample, FormatError> {
    decode_tree(&fs::read(path).map_err(io_err(path))?)
}

/// Identifies the run that produced an artifact.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Provenance {
    pub config_fingerprint: String,
    pub schedule_fingerprint: String,
    pub seed: u64,
    pub command: String,
}

/// Sidecar describing a raw path file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PathSidecar {
    pub provenance: Provenance,
    pub n: usize,
    pub grid_exp: usize,
    pub depth: usize,
    pub wavelet: Wavelet,
    pub h_low: f64,
    #[serde(with = "exponent")]
    pub h_high: f64,
    pub truncation_bound: f64,
    pub data_file: String,
}

/// `h_high` may be infinite; JSON has no token for that.
mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tok(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tok(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Tok(t) => Err(serde::de::Error::custom(format!("bad exponent {t:?}"))),
        }
    }
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>, FormatError> {
    if bytes.len() % 8 != 0 {
        return Err(FormatError::Path(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// CSV text `x,value` with a header line.
pub fn encode_csv(values: &[f64]) -> String {
    let n = values.len() as f64;
    let mut s = String::with_capacity(48 * values.len() + 8);
    s.push_str("x,value\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{:.16e},{:.16e}\n", i as f64 / n, v));
    }
    s
}

pub fn decode_csv(text: &str) -> Result<Vec<f64>, FormatError> {
    let mut lines = text.lines();
    if lines.next() != Some("x,value") {
        return Err(FormatError::Path("missing `x,value` header".into()));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| FormatError::Path(format!("csv line {}: malformed", i + 2)))
        })
        .collect()
}

/// Writes `<stem>.f64` and `<stem>.json`, plus `<stem>.csv` when asked.
pub fn write_path(
    dir: &Path,
    stem: &str,
    p: &SamplePath,
    provenance: Provenance,
    csv: bool,
) -> Result<PathSidecar, FormatError> {
    let data = dir.join(format!("{stem}.f64"));
    fs::write(&data, encode_f64s(&p.values)).map_err(io_err(&data))?;
    let side = PathSidecar {
        provenance,
        n: p.values.len(),
        grid_exp: p.grid_exp,
        depth: p.depth,
        wavelet: p.wavelet,
        h_low: p.h_low,
        h_high: p.h_high,
        truncation_bound: p.truncation_bound,
        data_file: format!("{stem}.f64"),
    };
    write_json(&dir.join(format!("{stem}.json")), &side)?;
    if csv {
        let c = dir.join(format!("{stem}.csv"));
        fs::write(&c, encode_csv(&p.values)).map_err(io_err(&c))?;
    }
    Ok(side)
}

/// Reads a path back from its sidecar.
pub fn read_path(sidecar: &Path) -> Result<SamplePath, FormatError> {
    let side: PathSidecar = read_json(sidecar)?;
    let data = sidecar.with_file_name(&side.data_file);
    let values = decode_f64s(&fs::read(&data).map_err(io_err(&data))?)?;
    if values.len() != side.n {
        return Err(FormatError::Path(format!("{} values, sidecar says {}", values.len(), side.n)));
    }
    Ok(SamplePath {
        grid_exp: side.grid_exp,
        depth: side.depth,
        h_low: side.h_low,
        h_high: side.h_high,
        wavelet: side.wavelet,
        truncation_bound: side.truncation_bound,
        values,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_text<T: Serialize + ?Sized>(v: &T) -> Result<String, FormatError> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<(), FormatError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(to_json_text(v)?.as_bytes()).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

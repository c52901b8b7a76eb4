//! The subcommands, as library functions. Each writes its artifacts into the
//! configured output directory and returns the JSON report it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use treewave_core::analysis::{
    self, default_t_grid, iso_holder_sets, locality_check, BoxDimension, ConstructionOptions, CoverMode,
    HolderEstimator, HolderProbe, LevelSets, LocalityReport, PointConstruction,
};
use treewave_core::kernels::{validate_schedule, ValidationReport};
use treewave_core::mc::{Event, McResult};
use treewave_core::params::{h_tilde_numeric, HTilde};
use treewave_core::spectrum::{large_deviation_field, predict_spectrum, EmptinessLaw, LdPoint, SpectrumPrediction};
use treewave_core::synth::{coefficients, synthesize, Wavelet};
use treewave_core::{DerivedParams, TreeSample};

use crate::config::{hex, RunConfig};
use crate::format::{self, FormatError, PathSidecar, Provenance};
use crate::parallel::{holder_field_par, mc_probability_par, sample_tree_par};

/// A failure, tagged with the module that raised it. The inner error is
/// already part of the message, so it is not exposed as a source.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[tree] {0}")]
    Tree(treewave_core::tree::TreeError),
    #[error("[params] {0}")]
    Params(treewave_core::params::ParamError),
    #[error("[spectrum] {0}")]
    Spectrum(treewave_core::spectrum::SpectrumError),
    #[error("[synth] {0}")]
    Synth(treewave_core::synth::SynthError),
    #[error("[analysis] {0}")]
    Analysis(treewave_core::analysis::AnalysisError),
    #[error("[mc] {0}")]
    Mc(treewave_core::mc::McError),
    #[error("[io] {0}")]
    Format(FormatError),
    #[error("[io] {0}")]
    Mismatch(String),
}

macro_rules! tagged {
    ($($variant:ident($ty:ty)),*) => {$(
        impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self {
                PipelineError::$variant(e)
            }
        }
    )*};
}

tagged!(
    Tree(treewave_core::tree::TreeError),
    Params(treewave_core::params::ParamError),
    Spectrum(treewave_core::spectrum::SpectrumError),
    Synth(treewave_core::synth::SynthError),
    Analysis(treewave_core::analysis::AnalysisError),
    Mc(treewave_core::mc::McError),
    Format(FormatError)
);

fn provenance(cfg: &RunConfig, command: &str) -> Provenance {
    Provenance {
        config_fingerprint: cfg.fingerprint.clone(),
        schedule_fingerprint: hex(&cfg.schedule.fingerprint()),
        seed: cfg.seed,
        command: command.into(),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, PipelineError> {
    let d = cfg.output_dir.as_path();
    fs::create_dir_all(d).map_err(|source| FormatError::Io {
        path: d.display().to_string(),
        source,
    })?;
    Ok(d)
}

/// Samples the configured tree, or loads `path` and checks it belongs to
/// this configuration.
pub fn load_tree(cfg: &RunConfig, path: Option<&Path>) -> Result<TreeSample, PipelineError> {
    match path {
        None => Ok(sample_tree_par(&cfg.schedule, cfg.depth, cfg.seed, crate::config::depth_cap().max(cfg.depth))?),
        Some(p) => {
            let t = format::read_tree(p)?;
            if t.seed() != cfg.seed || t.fingerprint() != cfg.schedule.fingerprint() || t.depth() != cfg.depth {
                return Err(PipelineError::Mismatch(format!(
                    "{}: tree (seed {}, depth {}) was not sampled from this configuration (seed {}, depth {})",
                    p.display(),
                    t.seed(),
                    t.depth(),
                    cfg.seed,
                    cfg.depth
                )));
            }
            Ok(t)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelCount {
    pub level: usize,
    pub ones: u64,
    pub fresh: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateReport {
    pub provenance: Provenance,
    pub depth: usize,
    pub tree_file: String,
    pub levels: Vec<LevelCount>,
}

pub fn simulate(cfg: &RunConfig) -> Result<SimulateReport, PipelineError> {
    let dir = out_dir(cfg)?;
    let t = load_tree(cfg, None)?;
    format::write_tree(&dir.join("tree.hmtt"), &t)?;
    let r = SimulateReport {
        provenance: provenance(cfg, "simulate"),
        depth: t.depth(),
        tree_file: "tree.hmtt".into(),
        levels: (0..=t.depth())
            .map(|j| LevelCount {
                level: j,
                ones: t.count_ones(j),
                fresh: t.count_fresh(j),
            })
            .collect(),
    };
    format::write_json(&dir.join("tree.json"), &r)?;
    Ok(r)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamsReport {
    pub provenance: Provenance,
    pub params: DerivedParams,
    /// Term-slope estimate of `h̃`, for schedules without a closed form.
    pub h_tilde_numeric: HTilde,
    pub validation: ValidationReport,
}

pub fn params(cfg: &RunConfig) -> Result<ParamsReport, PipelineError> {
    let dir = out_dir(cfg)?;
    let r = ParamsReport {
        provenance: provenance(cfg, "params"),
        params: DerivedParams::compute(&cfg.schedule, cfg.h_low, cfg.h_high, cfg.depth)?,
        h_tilde_numeric: h_tilde_numeric(&cfg.schedule, cfg.h_low, cfg.depth),
        validation: validate_schedule(&cfg.schedule, cfg.depth),
    };
    format::write_json(&dir.join("params.json"), &r)?;
    Ok(r)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub provenance: Provenance,
    pub prediction: SpectrumPrediction,
    pub p_theta_empty: EmptinessLaw,
}

pub fn spectrum(cfg: &RunConfig) -> Result<SpectrumReport, PipelineError> {
    let dir = out_dir(cfg)?;
    let p = DerivedParams::compute(&cfg.schedule, cfg.h_low, cfg.h_high, cfg.depth)?;
    let prediction = predict_spectrum(&cfg.schedule, &p)?;
    let r = SpectrumReport {
        provenance: provenance(cfg, "spectrum"),
        p_theta_empty: prediction.p_theta_empty.clone(),
        prediction,
    };
    format::write_json(&dir.join("spectrum.json"), &r)?;
    Ok(r)
}

pub fn synth(cfg: &RunConfig, tree: Option<&Path>, csv: bool) -> Result<PathSidecar, PipelineError> {
    let dir = out_dir(cfg)?;
    let t = load_tree(cfg, tree)?;
    let c = coefficients(&t, cfg.h_low, cfg.h_high)?;
    let p = synthesize(&c, Wavelet::Meyer, cfg.grid_exp)?;
    Ok(format::write_path(dir, "path", &p, provenance(cfg, "synth"), csv)?)
}

/// Options of [`analyze`].
#[derive(Clone, Debug)]
pub struct AnalyzeOptions {
    /// Exponents whose level sets are measured; empty means `{1.25, 1.5, 1.75}·ḥ`.
    pub h_values: Vec<f64>,
    /// Half-width of the level-set window, as a multiple of `ḥ`.
    pub eps: f64,
    /// Compute `β̂` at every grid point.
    pub beta: bool,
    pub arcs: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            h_values: Vec::new(),
            eps: 0.1,
            beta: false,
            arcs: 4,
        }
    }
}

/// Dimension fit, or the reason it could not be made.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fit {
    Ok(BoxDimension),
    Failed(String),
}

impl From<Result<BoxDimension, analysis::AnalysisError>> for Fit {
    fn from(r: Result<BoxDimension, analysis::AnalysisError>) -> Self {
        match r {
            Ok(d) => Fit::Ok(d),
            Err(e) => Fit::Failed(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSetReport {
    pub h: f64,
    pub eps: f64,
    pub exact_points: usize,
    pub sub_points: usize,
    pub exact_cover: Vec<(usize, u64)>,
    pub sub_cover: Vec<(usize, u64)>,
    pub exact_witnesses: Vec<(usize, u64)>,
    pub sub_witnesses: Vec<(usize, u64)>,
    /// Box-counting fits over dyadic intervals (the reported estimate).
    pub exact_dimension: Fit,
    pub sub_dimension: Fit,
    /// Same fits with one ball per witness vertex; noisier at small depth.
    pub witness_exact_dimension: Fit,
    pub witness_sub_dimension: Fit,
    /// Predicted value of the spectrum at `h`, when deterministic.
    pub predicted: Option<f64>,
    pub locality: Option<LocalityReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeReport {
    pub provenance: Provenance,
    pub probe: HolderProbe,
    pub grid_exp: usize,
    pub holder_file: String,
    pub median_holder: f64,
    pub clamped_fraction: f64,
    pub level_sets: Vec<LevelSetReport>,
    pub large_deviation: Vec<LdPoint>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn probe(cfg: &RunConfig) -> HolderProbe {
    HolderProbe {
        j_min: cfg.j_min,
        depth: cfg.depth,
        ceiling: cfg.probe_ceiling,
    }
}

pub fn analyze(cfg: &RunConfig, tree: Option<&Path>, opts: &AnalyzeOptions) -> Result<AnalyzeReport, PipelineError> {
    let dir = out_dir(cfg)?;
    let t = load_tree(cfg, tree)?;
    let sets = LevelSets::from_tree(&t);
    let est = HolderEstimator::new(&sets, cfg.h_low, cfg.h_high, probe(cfg))?;
    let field = holder_field_par(&est, cfg.holder_grid_exp);

    let t_grid = default_t_grid(cfg.h_low);
    let mut csv = String::from(if opts.beta { "x,h,clamped,beta\n" } else { "x,h,clamped\n" });
    for (i, e) in field.estimates.iter().enumerate() {
        csv.push_str(&format!("{:.16e},{:.16e},{}", field.x(i), e.value, e.clamped as u8));
        // TODO: β̂ runs serially here; move it into holder_field_par (same
        // rayon pool) once `analyze --beta` on 2^20 points matters.
        if opts.beta {
            match est.beta(field.x(i), &t_grid) {
                Ok(b) => csv.push_str(&format!(",{b:.16e}")),
                Err(_) => csv.push_str(",nan"),
            }
        }
        csv.push('\n');
    }
    let holder_path = dir.join("holder.csv");
    fs::write(&holder_path, csv).map_err(|source| FormatError::Io {
        path: holder_path.display().to_string(),
        source,
    })?;

    let prediction = DerivedParams::compute(&cfg.schedule, cfg.h_low, cfg.h_high, cfg.depth)
        .ok()
        .and_then(|p| predict_spectrum(&cfg.schedule, &p).ok());
    let h_values = if opts.h_values.is_empty() {
        vec![1.25 * cfg.h_low, 1.5 * cfg.h_low, 1.75 * cfg.h_low]
    } else {
        opts.h_values.clone()
    };
    let eps = opts.eps * cfg.h_low;
    let mut level_sets = Vec::new();
    for &h in &h_values {
        let s = iso_holder_sets(&field, h, eps)?;
        let predicted = prediction.as_ref().and_then(|p| match p.eval(h) {
            treewave_core::spectrum::DimensionAt::Sure(d) => Some(d),
            treewave_core::spectrum::DimensionAt::Random(..) => None,
        });
        level_sets.push(LevelSetReport {
            h,
            eps,
            exact_points: s.exact.len(),
            sub_points: s.sub.len(),
            exact_dimension: s.exact_dimension(CoverMode::Dyadic).into(),
            sub_dimension: s.sub_dimension(CoverMode::Dyadic).into(),
            witness_exact_dimension: s.exact_dimension(CoverMode::Witness).into(),
            witness_sub_dimension: s.sub_dimension(CoverMode::Witness).into(),
            exact_cover: s.exact_cover,
            sub_cover: s.sub_cover,
            exact_witnesses: s.exact_witnesses,
            sub_witnesses: s.sub_witnesses,
            predicted,
            locality: locality_check(&field, h, eps, opts.arcs, CoverMode::Dyadic).ok(),
        });
    }

    let c = coefficients(&t, cfg.h_low, cfg.h_high)?;
    let ld_grid: Vec<f64> = (1..=8).map(|i| cfg.h_low * (1.0 + 0.25 * i as f64)).collect();
    let r = AnalyzeReport {
        provenance: provenance(cfg, "analyze"),
        probe: est.probe(),
        grid_exp: cfg.holder_grid_exp,
        holder_file: "holder.csv".into(),
        median_holder: median(field.values().collect()),
        clamped_fraction: field.estimates.iter().filter(|e| e.clamped).count() as f64 / field.len() as f64,
        level_sets,
        large_deviation: large_deviation_field(&c, &ld_grid, 0.05 * cfg.h_low),
    };
    format::write_json(&dir.join("levelsets.json"), &r)?;
    Ok(r)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructReport {
    pub provenance: Provenance,
    pub options: ConstructionOptions,
    pub construction: PointConstruction,
    /// `Ok` or the first violated invariant.
    pub check: Result<(), String>,
    /// `ĥ(y)` when a point was produced.
    pub holder_at_y: Option<f64>,
}

pub fn construct_point(
    cfg: &RunConfig,
    tree: Option<&Path>,
    h: f64,
    opts: ConstructionOptions,
) -> Result<(ConstructReport, PathBuf), PipelineError> {
    let dir = out_dir(cfg)?;
    let t = load_tree(cfg, tree)?;
    let p = DerivedParams::compute(&cfg.schedule, cfg.h_low, cfg.h_high, cfg.depth)?;
    let sets = LevelSets::from_tree(&t);
    let c = analysis::construct_point_on(&sets, &cfg.schedule, cfg.h_low, cfg.h_high, p.theta.value, h, opts)?;
    let est = HolderEstimator::new(&sets, cfg.h_low, cfg.h_high, probe(cfg))?;
    let r = ConstructReport {
        provenance: provenance(cfg, "construct-point"),
        options: opts,
        check: analysis::check_construction(&c, &sets, cfg.h_low),
        holder_at_y: c.y.map(|y| est.estimate(y).value),
        construction: c,
    };
    let path = dir.join(format!("construction_h{h}.json"));
    format::write_json(&path, &r)?;
    Ok((r, path))
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub provenance: Provenance,
    pub result: McResult,
    /// `None` when the event has no exact oracle.
    pub pass: Option<bool>,
}

pub fn verify(cfg: &RunConfig, event: &str, trials: u64, depth: usize) -> Result<VerifyReport, PipelineError> {
    let dir = out_dir(cfg)?;
    let ev = Event::parse(event)?;
    let cap = crate::config::depth_cap();
    let result = mc_probability_par(&cfg.schedule, depth, ev, trials, cfg.seed, cap)?;
    let r = VerifyReport {
        provenance: provenance(cfg, "verify"),
        pass: result.oracle_in_interval(),
        result,
    };
    format::write_json(&dir.join(format!("verify_{event}.json")), &r)?;
    Ok(r)
}

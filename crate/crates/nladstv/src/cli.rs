//! Command-line front end: reproducible degrade / estimate / restore /
//! evaluate / bench experiments.
//!
//! Every command reads an optional flat `key value` config file, applies
//! command-line overrides on top, and writes a JSON metadata sidecar next to
//! its main output so a run can be regenerated from its artifacts alone.
//! Exit codes: 0 success, 2 configuration or input error, 3 solver
//! divergence, 4 I/O error.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dpe::{estimate_parameters_with, load_directions, save_directions, DpeConfig};
use crate::error::{Error, Result};
use crate::image::{add_gaussian_noise, load_image, psnr, save_image, ImageField};
use crate::jacobian::{DirectionField, RegularizerMode, SchattenOrder};
use crate::linops::{bsnr_sigma, gaussian_kernel, motion_kernel, wiener_deblur, ForwardModel};
use crate::nlweights::{build_weight_graph, gaussian_weight_graph, PatchConfig, WeightGraph};
use crate::proxsolve::{admm_restore_detailed, Restoration, SolverConfig};

/// Peak signal value of the normalized images this tool works with.
const PEAK: f64 = 1.0;

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Denoise,
    Deblur,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "deblur" => Ok(Task::Deblur),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected denoise or deblur)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurKind {
    None,
    Gaussian,
    Motion,
}

impl FromStr for BlurKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BlurKind::None),
            "gaussian" => Ok(BlurKind::Gaussian),
            "motion" => Ok(BlurKind::Motion),
            other => Err(Error::Config(format!(
                "unknown blur kind '{other}' (expected none, gaussian or motion)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stv,
    Adstv,
    Nlstv,
    Nladstv,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Stv, Method::Adstv, Method::Nlstv, Method::Nladstv];

    /// Directional methods consume an estimated [`DirectionField`].
    pub fn is_directional(self) -> bool {
        matches!(self, Method::Adstv | Method::Nladstv)
    }

    /// Nonlocal methods build the patch-similarity graph; the local ones use
    /// a small Gaussian window graph.
    pub fn is_nonlocal(self) -> bool {
        matches!(self, Method::Nlstv | Method::Nladstv)
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stv" => Ok(Method::Stv),
            "adstv" => Ok(Method::Adstv),
            "nlstv" => Ok(Method::Nlstv),
            "nladstv" => Ok(Method::Nladstv),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected stv, adstv, nlstv or nladstv)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Stv => "stv",
            Method::Adstv => "adstv",
            Method::Nlstv => "nlstv",
            Method::Nladstv => "nladstv",
        };
        f.write_str(name)
    }
}

/// One experiment's worth of settings. Built from defaults, then a config
/// file, then command-line flags (later sources win).
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Noise std on [0,1]-scaled intensities (ignored when `bsnr` is set).
    pub sigma: f64,
    /// Blurred signal-to-noise ratio in dB; when set, the noise std is
    /// derived from the blurred image's variance.
    pub bsnr: Option<f64>,
    pub blur: BlurKind,
    pub blur_support: usize,
    pub blur_sigma: f64,
    pub blur_len: usize,
    pub blur_angle: f64,
    pub method: Method,
    pub tau: f64,
    /// ADMM penalty; 0 selects the solver default (`10 * tau`, or 1 when
    /// `tau` is 0).
    pub mu: f64,
    /// Schatten order of the per-pixel penalty: "1" or "2".
    pub p: String,
    pub alpha_plus: f64,
    /// Upper bound of the box constraint.
    pub gamma: f64,
    pub patch_size: usize,
    pub window_size: usize,
    pub rho: f64,
    pub beta: f64,
    pub neighbors: usize,
    /// Window graph settings for the local methods (stv, adstv).
    pub gw_support: usize,
    pub gw_sigma: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Per-element primal-residual guard on convergence (0 disables).
    pub tol_primal: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub seed: u64,
    pub wiener_nsr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let patch = PatchConfig::restoration_default();
        ExperimentConfig {
            task: Task::Denoise,
            sigma: 0.1,
            bsnr: None,
            blur: BlurKind::None,
            blur_support: 9,
            blur_sigma: 6.0,
            blur_len: 9,
            blur_angle: 0.0,
            method: Method::Nladstv,
            tau: 0.05,
            mu: 0.0,
            p: "1".into(),
            alpha_plus: 4.0,
            gamma: 1.0,
            patch_size: patch.patch_size,
            window_size: patch.window_size,
            rho: patch.rho,
            beta: patch.beta,
            neighbors: patch.neighbors,
            gw_support: 3,
            gw_sigma: 0.5,
            max_iter: 200,
            tol: 1e-4,
            tol_primal: 1e-3,
            cg_tol: 1e-5,
            cg_max_iter: 100,
            seed: 17,
            wiener_nsr: 1e-2,
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then the config file (if any), then flag overrides.
    pub fn from_sources(opts: &CommonOpts) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &opts.config {
            for (key, value) in parse_kv_file(path)? {
                cfg.apply(&key, &value)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            }
        }
        opts.apply_to(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("{key} '{value}': {e}")))
        }
        match key {
            "task" => self.task = value.parse()?,
            "sigma" => self.sigma = num(key, value)?,
            "bsnr" => self.bsnr = Some(num(key, value)?),
            "blur" => self.blur = value.parse()?,
            "blur_support" => self.blur_support = num(key, value)?,
            "blur_sigma" => self.blur_sigma = num(key, value)?,
            "blur_len" => self.blur_len = num(key, value)?,
            "blur_angle" => self.blur_angle = num(key, value)?,
            "method" => self.method = value.parse()?,
            "tau" => self.tau = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "p" => self.p = value.to_string(),
            "alpha_plus" => self.alpha_plus = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "window_size" => self.window_size = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "neighbors" => self.neighbors = num(key, value)?,
            "gw_support" => self.gw_support = num(key, value)?,
            "gw_sigma" => self.gw_sigma = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "tol_primal" => self.tol_primal = num(key, value)?,
            "cg_tol" => self.cg_tol = num(key, value)?,
            "cg_max_iter" => self.cg_max_iter = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "wiener_nsr" => self.wiener_nsr = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self.task {
            Task::Denoise => {
                if self.blur != BlurKind::None {
                    return Err(Error::Config(
                        "task denoise does not take a blur kernel (use task deblur)".into(),
                    ));
                }
                if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
                    return Err(Error::Config(format!("noise sigma {} invalid", self.sigma)));
                }
            }
            Task::Deblur => {
                if self.blur == BlurKind::None {
                    return Err(Error::Config("task deblur needs blur gaussian|motion".into()));
                }
            }
        }
        SchattenOrder::from_str(&self.p)?;
        self.patch_config().validate()?;
        if self.method.is_directional() && !(self.alpha_plus > 1.0) {
            return Err(Error::Config(format!(
                "method {} needs alpha_plus > 1, got {}",
                self.method, self.alpha_plus
            )));
        }
        Ok(())
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig {
            patch_size: self.patch_size,
            window_size: self.window_size,
            rho: self.rho,
            beta: self.beta,
            neighbors: self.neighbors,
        }
    }

    pub fn forward_model(&self) -> Result<ForwardModel> {
        Ok(match self.blur {
            BlurKind::None => ForwardModel::Identity,
            BlurKind::Gaussian => {
                ForwardModel::Convolution(gaussian_kernel(self.blur_support, self.blur_sigma)?)
            }
            BlurKind::Motion => {
                ForwardModel::Convolution(motion_kernel(self.blur_len, self.blur_angle)?)
            }
        })
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let mut solver = SolverConfig::new(self.tau);
        if self.mu > 0.0 {
            solver.mu = self.mu;
        } else if self.tau == 0.0 {
            solver.mu = 1.0;
        }
        solver.p = SchattenOrder::from_str(&self.p)?;
        solver.gamma = self.gamma;
        solver.max_iter = self.max_iter;
        solver.tol = self.tol;
        solver.tol_primal = self.tol_primal;
        solver.cg_tol = self.cg_tol;
        solver.cg_max_iter = self.cg_max_iter;
        Ok(solver)
    }

    pub fn dpe_config(&self) -> DpeConfig {
        DpeConfig {
            alpha_plus: self.alpha_plus,
            wiener_nsr: self.wiener_nsr,
            ..DpeConfig::default()
        }
    }

    /// Compact degradation descriptor for report rows.
    pub fn degradation_label(&self, sigma_effective: f64) -> String {
        match self.task {
            Task::Denoise => format!("noise s{sigma_effective:.3}"),
            Task::Deblur => {
                let blur = match self.blur {
                    BlurKind::Gaussian => {
                        format!("gauss{}x{} sb{}", self.blur_support, self.blur_support, self.blur_sigma)
                    }
                    BlurKind::Motion => format!("motion{} a{}", self.blur_len, self.blur_angle),
                    BlurKind::None => "none".into(),
                };
                match self.bsnr {
                    Some(db) => format!("{blur} bsnr{db}"),
                    None => format!("{blur} s{sigma_effective:.3}"),
                }
            }
        }
    }
}

/// Parse a flat `key value` config file: one setting per line, `#` comments,
/// blank lines ignored. `key = value` is accepted too.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cleaned = line.replacen('=', " ", 1);
        let mut it = cleaned.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(v), None) => out.push((k.to_string(), v.to_string())),
            _ => {
                return Err(Error::Config(format!(
                    "{}:{}: expected 'key value', got '{raw}'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

/// Settings shared by every pipeline command; each flag overrides the
/// config-file key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonOpts {
    /// Flat key-value config file applied before flag overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Task: denoise or deblur.
    #[arg(long)]
    pub task: Option<String>,
    /// Noise std on [0,1] intensities.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Blurred SNR in dB (deblur; derives the noise std).
    #[arg(long)]
    pub bsnr: Option<f64>,
    /// Blur kind: none, gaussian or motion.
    #[arg(long)]
    pub blur: Option<String>,
    /// Gaussian blur support (odd).
    #[arg(long)]
    pub blur_support: Option<usize>,
    /// Gaussian blur std.
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    /// Motion blur length in pixels.
    #[arg(long)]
    pub blur_len: Option<usize>,
    /// Motion blur angle in degrees.
    #[arg(long)]
    pub blur_angle: Option<f64>,
    /// Regularizer: stv, adstv, nlstv or nladstv.
    #[arg(long)]
    pub method: Option<String>,
    /// Regularization weight.
    #[arg(long)]
    pub tau: Option<f64>,
    /// ADMM penalty (0 = automatic).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Schatten order: 1 or 2.
    #[arg(long)]
    pub p: Option<String>,
    /// Across-direction penalty of the directional methods.
    #[arg(long)]
    pub alpha_plus: Option<f64>,
    /// Upper bound of the box constraint.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Similarity patch side (odd).
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Similarity search window side (odd).
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Patch-taper std.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Similarity bandwidth.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Neighbors kept per pixel.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Window-graph support for stv/adstv (odd).
    #[arg(long)]
    pub gw_support: Option<usize>,
    /// Window-graph std for stv/adstv.
    #[arg(long)]
    pub gw_sigma: Option<f64>,
    /// Outer iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative-change stopping threshold.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Per-element primal-residual guard on convergence (0 disables).
    #[arg(long)]
    pub tol_primal: Option<f64>,
    /// Inner CG tolerance.
    #[arg(long)]
    pub cg_tol: Option<f64>,
    /// Inner CG iteration cap.
    #[arg(long)]
    pub cg_max_iter: Option<usize>,
    /// Noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Wiener pre-deblur noise-to-signal ratio.
    #[arg(long)]
    pub wiener_nsr: Option<f64>,
}

impl CommonOpts {
    fn apply_to(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = &self.task {
            cfg.task = v.parse()?;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.bsnr {
            cfg.bsnr = Some(v);
        }
        if let Some(v) = &self.blur {
            cfg.blur = v.parse()?;
        }
        if let Some(v) = self.blur_support {
            cfg.blur_support = v;
        }
        if let Some(v) = self.blur_sigma {
            cfg.blur_sigma = v;
        }
        if let Some(v) = self.blur_len {
            cfg.blur_len = v;
        }
        if let Some(v) = self.blur_angle {
            cfg.blur_angle = v;
        }
        if let Some(v) = &self.method {
            cfg.method = v.parse()?;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(v) = &self.p {
            cfg.p = v.clone();
        }
        if let Some(v) = self.alpha_plus {
            cfg.alpha_plus = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.patch_size {
            cfg.patch_size = v;
        }
        if let Some(v) = self.window_size {
            cfg.window_size = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.neighbors {
            cfg.neighbors = v;
        }
        if let Some(v) = self.gw_support {
            cfg.gw_support = v;
        }
        if let Some(v) = self.gw_sigma {
            cfg.gw_sigma = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.tol_primal {
            cfg.tol_primal = v;
        }
        if let Some(v) = self.cg_tol {
            cfg.cg_tol = v;
        }
        if let Some(v) = self.cg_max_iter {
            cfg.cg_max_iter = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.wiener_nsr {
            cfg.wiener_nsr = v;
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "nladstv",
    version,
    about = "Direction-adaptive nonlocal structure-tensor TV image restoration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a degraded observation (blur + seeded Gaussian noise).
    Degrade(DegradeArgs),
    /// Estimate per-pixel direction parameters from a degraded image.
    Estimate(EstimateArgs),
    /// Restore a degraded image with the configured regularizer.
    Restore(RestoreArgs),
    /// Compare restored images against references (CSV report).
    Evaluate(EvaluateArgs),
    /// Sweep a corpus: per image and method, grid-search tau and report the best run.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Clean input image (.png or .tvf).
    #[arg(long)]
    pub clean: PathBuf,
    /// Degraded output image (.png or .tvf).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Degraded input image.
    #[arg(long)]
    pub degraded: PathBuf,
    /// Output prefix; writes <prefix>.theta.tvf, <prefix>.alpha.tvf, <prefix>.meta.
    #[arg(long)]
    pub out_prefix: PathBuf,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    /// Degraded input image.
    #[arg(long)]
    pub degraded: PathBuf,
    /// Restored output image.
    #[arg(long)]
    pub out: PathBuf,
    /// Direction-field prefix (required for adstv/nladstv).
    #[arg(long)]
    pub dirs: Option<PathBuf>,
    /// Clean reference; adds a PSNR column to the iteration log.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Write the per-iteration CSV log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reference images, pairwise with --restored.
    #[arg(long, num_args = 1.., required = true)]
    pub reference: Vec<PathBuf>,
    /// Restored images, pairwise with --reference.
    #[arg(long, num_args = 1.., required = true)]
    pub restored: Vec<PathBuf>,
    /// Report CSV path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of clean corpus images (.png / .tvf).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory (per-cell JSON under cells/, aggregate bench.csv).
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated method list (default: all four).
    #[arg(long)]
    pub methods: Option<String>,
    /// Lower bound of the logarithmic tau grid.
    #[arg(long, default_value_t = 0.005)]
    pub tau_min: f64,
    /// Upper bound of the logarithmic tau grid.
    #[arg(long, default_value_t = 0.5)]
    pub tau_max: f64,
    /// Number of tau grid points.
    #[arg(long, default_value_t = 8)]
    pub tau_points: usize,
    /// Parallel bench cells (each cell is internally deterministic).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Recompute cells even when a finished cell file exists.
    #[arg(long)]
    pub fresh: bool,
    #[command(flatten)]
    pub opts: CommonOpts,
}

// ---------------------------------------------------------------------------
// Metadata sidecars and report rows
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct DegradeMeta<'a> {
    command: &'static str,
    clean: String,
    out: String,
    sigma_effective: f64,
    psnr_db: f64,
    config: &'a ExperimentConfig,
}

#[derive(Debug, Serialize)]
struct EstimateMeta<'a> {
    command: &'static str,
    degraded: String,
    out_prefix: String,
    config: &'a ExperimentConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct RestoreMeta {
    command: String,
    image_id: String,
    method: String,
    degradation: String,
    tau: f64,
    iterations: usize,
    converged: bool,
    objective: f64,
    psnr_db: Option<f64>,
    elapsed_s: f64,
}

/// One line of an evaluation or bench report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub image: String,
    pub method: String,
    pub degradation: String,
    pub tau: f64,
    pub psnr_db: f64,
    pub elapsed_s: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TauRun {
    tau: f64,
    psnr_db: f64,
    iterations: usize,
    converged: bool,
}

/// Finished bench cell: one image x method, swept over the tau grid.
#[derive(Debug, Serialize, Deserialize)]
struct CellResult {
    image: String,
    method: String,
    degradation: String,
    sigma_effective: f64,
    seed: u64,
    runs: Vec<TauRun>,
    best: TauRun,
    elapsed_s: f64,
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_degrade(args: &DegradeArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_sources(&args.opts)?;
    let clean = load_image(&args.clean)?;
    let model = cfg.forward_model()?;
    let blurred = model.apply(&clean);
    let sigma = match (cfg.task, cfg.bsnr) {
        (Task::Deblur, Some(db)) => bsnr_sigma(&blurred, db)?,
        _ => cfg.sigma,
    };
    let g = add_gaussian_noise(&blurred, sigma, cfg.seed)?;
    save_image(&g, &args.out)?;
    let noisy_psnr = psnr(&clean, &g, PEAK)?;
    write_json(
        &sidecar_path(&args.out),
        &DegradeMeta {
            command: "degrade",
            clean: args.clean.display().to_string(),
            out: args.out.display().to_string(),
            sigma_effective: sigma,
            psnr_db: noisy_psnr,
            config: &cfg,
        },
    )?;
    println!(
        "degraded {} -> {} ({}, psnr {:.2} dB)",
        args.clean.display(),
        args.out.display(),
        cfg.degradation_label(sigma),
        noisy_psnr
    );
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_sources(&args.opts)?;
    let g = load_image(&args.degraded)?;
    let model = cfg.forward_model()?;
    let dirs = estimate_parameters_with(&g, &model, &cfg.dpe_config())?;
    save_directions(&dirs, &args.out_prefix)?;
    write_json(
        &sidecar_path(&args.out_prefix),
        &EstimateMeta {
            command: "estimate",
            degraded: args.degraded.display().to_string(),
            out_prefix: args.out_prefix.display().to_string(),
            config: &cfg,
        },
    )?;
    let mean_alpha =
        dirs.alpha_minor.iter().sum::<f64>() / dirs.alpha_minor.len() as f64;
    println!(
        "estimated directions for {} -> {}.{{theta,alpha}}.tvf (mean alpha- {:.2})",
        args.degraded.display(),
        args.out_prefix.display(),
        mean_alpha
    );
    Ok(())
}

/// Build the regularizer for a method: window graph for the local methods,
/// patch-similarity graph (guided by the Wiener-deblurred observation when
/// deblurring) for the nonlocal ones; directional methods wrap the supplied
/// direction field.
fn build_mode(
    cfg: &ExperimentConfig,
    g: &ImageField,
    dirs: Option<DirectionField>,
) -> Result<RegularizerMode> {
    let graph = build_graph(cfg, g)?;
    build_mode_with_graph(cfg, graph, dirs)
}

fn build_graph(cfg: &ExperimentConfig, g: &ImageField) -> Result<WeightGraph> {
    if cfg.method.is_nonlocal() {
        let guide = match (&cfg.task, cfg.forward_model()?) {
            (Task::Deblur, ForwardModel::Convolution(kernel)) => {
                wiener_deblur(g, &kernel, cfg.wiener_nsr)?
            }
            _ => g.clone(),
        };
        build_weight_graph(&guide, &cfg.patch_config())
    } else {
        gaussian_weight_graph(g.width, g.height, cfg.gw_support, cfg.gw_sigma)
    }
}

fn build_mode_with_graph(
    cfg: &ExperimentConfig,
    graph: WeightGraph,
    dirs: Option<DirectionField>,
) -> Result<RegularizerMode> {
    if cfg.method.is_directional() {
        let dirs = dirs.ok_or_else(|| {
            Error::Config(format!(
                "method {} needs a direction field (--dirs <prefix>)",
                cfg.method
            ))
        })?;
        Ok(RegularizerMode::Nladstv { graph, dirs })
    } else {
        Ok(RegularizerMode::Nlstv { graph })
    }
}

fn write_iteration_log(path: &Path, restoration: &Restoration) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(
        f,
        "iteration,objective,primal_residual_z1,primal_residual_z2,rel_change,cg_iterations,psnr_db"
    )?;
    for row in &restoration.log {
        let psnr_cell = row.psnr_db.map(|v| format!("{v:.4}")).unwrap_or_default();
        writeln!(
            f,
            "{},{:.10e},{:.6e},{:.6e},{:.6e},{},{}",
            row.iteration,
            row.objective,
            row.primal_residual_z1,
            row.primal_residual_z2,
            row.rel_change,
            row.cg_iterations,
            psnr_cell
        )?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_restore(args: &RestoreArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_sources(&args.opts)?;
    let g = load_image(&args.degraded)?;
    let dirs = match &args.dirs {
        Some(prefix) => Some(load_directions(prefix)?),
        None => None,
    };
    let mode = build_mode(&cfg, &g, dirs)?;
    let model = cfg.forward_model()?;
    let solver = cfg.solver_config()?;
    let reference = match &args.reference {
        Some(path) => Some(load_image(path)?),
        None => None,
    };
    let start = Instant::now();
    let restoration = admm_restore_detailed(&g, &model, &mode, &solver, reference.as_ref())?;
    let elapsed = start.elapsed().as_secs_f64();
    save_image(&restoration.image, &args.out)?;
    if let Some(log_path) = &args.log {
        write_iteration_log(log_path, &restoration)?;
    }
    let final_log = restoration.log.last();
    let meta = RestoreMeta {
        command: "restore".into(),
        image_id: file_stem(&args.degraded),
        method: cfg.method.to_string(),
        degradation: cfg.degradation_label(cfg.sigma),
        tau: cfg.tau,
        iterations: restoration.iterations,
        converged: restoration.converged,
        objective: final_log.map(|l| l.objective).unwrap_or(f64::NAN),
        psnr_db: final_log.and_then(|l| l.psnr_db),
        elapsed_s: elapsed,
    };
    write_json(&sidecar_path(&args.out), &meta)?;
    match meta.psnr_db {
        Some(db) => println!(
            "restored {} -> {} ({} tau {}, {} iters, psnr {:.2} dB, {:.1}s)",
            args.degraded.display(),
            args.out.display(),
            cfg.method,
            cfg.tau,
            restoration.iterations,
            db,
            elapsed
        ),
        None => println!(
            "restored {} -> {} ({} tau {}, {} iters, {:.1}s)",
            args.degraded.display(),
            args.out.display(),
            cfg.method,
            cfg.tau,
            restoration.iterations,
            elapsed
        ),
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.reference.len() != args.restored.len() {
        return Err(Error::Config(format!(
            "{} references vs {} restored images; they pair up one to one",
            args.reference.len(),
            args.restored.len()
        )));
    }
    let mut rows = Vec::new();
    for (reference, restored) in args.reference.iter().zip(&args.restored) {
        let r = load_image(reference)?;
        let t = load_image(restored)?;
        let db = psnr(&r, &t, PEAK)?;
        // restores leave a sidecar with run provenance; fall back to file
        // names when comparing images produced elsewhere
        let meta: Option<RestoreMeta> = fs::read_to_string(sidecar_path(restored))
            .ok()
            .and_then(|text| serde_json::from_str(&text).ok());
        rows.push(match meta {
            Some(m) => ReportRow {
                image: m.image_id,
                method: m.method,
                degradation: m.degradation,
                tau: m.tau,
                psnr_db: db,
                elapsed_s: m.elapsed_s,
                iterations: m.iterations,
            },
            None => ReportRow {
                image: file_stem(reference),
                method: file_stem(restored),
                degradation: "-".into(),
                tau: f64::NAN,
                psnr_db: db,
                elapsed_s: 0.0,
                iterations: 0,
            },
        });
    }
    let csv = render_report(rows);
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// Render rows sorted by (image, method, degradation), flag the best method
/// per image with `*`, and append an average row.
pub fn render_report(mut rows: Vec<ReportRow>) -> String {
    rows.sort_by(|a, b| {
        (&a.image, &a.method, &a.degradation).cmp(&(&b.image, &b.method, &b.degradation))
    });
    let mut best = HashMap::new();
    for row in &rows {
        let entry = best.entry(row.image.clone()).or_insert(f64::NEG_INFINITY);
        *entry = entry.max(row.psnr_db);
    }
    let mut out = String::from("image,method,degradation,tau,psnr_db,elapsed_s,iterations,best\n");
    for row in &rows {
        let flag = if row.psnr_db == best[&row.image] { "*" } else { "" };
        let tau = if row.tau.is_nan() {
            String::new()
        } else {
            format!("{}", row.tau)
        };
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.2},{},{}\n",
            row.image,
            row.method,
            row.degradation,
            tau,
            row.psnr_db,
            row.elapsed_s,
            row.iterations,
            flag
        ));
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_time = rows.iter().map(|r| r.elapsed_s).sum::<f64>() / n;
        out.push_str(&format!("Avg.,,,,{mean_psnr:.4},{mean_time:.2},,\n"));
    }
    out
}

/// Logarithmic grid of `points` values spanning `[lo, hi]`.
pub fn tau_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || points == 0 {
        return Err(Error::Config(format!(
            "tau grid needs 0 < min <= max and >= 1 point, got [{lo}, {hi}] x {points}"
        )));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect();
    // The ln/exp round trip lands a few ULPs off the user's bounds, which then
    // print as e.g. 0.07999999999999999 in reports; pin the endpoints exactly.
    grid[0] = lo;
    grid[points - 1] = hi;
    Ok(grid)
}

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

struct BenchCell {
    stem: String,
    clean_path: PathBuf,
    method: Method,
}

fn bench_cell(
    cfg: &ExperimentConfig,
    cell: &BenchCell,
    grid: &[f64],
    dir_cache: &Mutex<HashMap<String, Arc<DirectionField>>>,
    graph_cache: &Mutex<HashMap<(String, bool), Arc<WeightGraph>>>,
) -> Result<CellResult> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    cfg.method = cell.method;

    let clean = load_image(&cell.clean_path)?;
    let model = cfg.forward_model()?;
    let blurred = model.apply(&clean);
    let seed = cfg.seed ^ fnv1a(&cell.stem);
    let sigma = match (cfg.task, cfg.bsnr) {
        (Task::Deblur, Some(db)) => bsnr_sigma(&blurred, db)?,
        _ => cfg.sigma,
    };
    let g = add_gaussian_noise(&blurred, sigma, seed)?;

    let dirs = if cell.method.is_directional() {
        let cached = dir_cache.lock().unwrap().get(&cell.stem).cloned();
        let dirs = match cached {
            Some(d) => d,
            None => {
                let d = Arc::new(estimate_parameters_with(&g, &model, &cfg.dpe_config())?);
                dir_cache
                    .lock()
                    .unwrap()
                    .insert(cell.stem.clone(), d.clone());
                d
            }
        };
        Some((*dirs).clone())
    } else {
        None
    };

    let graph_key = (cell.stem.clone(), cell.method.is_nonlocal());
    let cached = graph_cache.lock().unwrap().get(&graph_key).cloned();
    let graph = match cached {
        Some(gr) => gr,
        None => {
            let gr = Arc::new(build_graph(&cfg, &g)?);
            graph_cache
                .lock()
                .unwrap()
                .insert(graph_key, gr.clone());
            gr
        }
    };

    let mut runs = Vec::with_capacity(grid.len());
    for &tau in grid {
        cfg.tau = tau;
        let mode = build_mode_with_graph(&cfg, (*graph).clone(), dirs.clone())?;
        let solver = cfg.solver_config()?;
        let restoration = admm_restore_detailed(&g, &model, &mode, &solver, None)?;
        runs.push(TauRun {
            tau,
            psnr_db: psnr(&clean, &restoration.image, PEAK)?,
            iterations: restoration.iterations,
            converged: restoration.converged,
        });
    }
    let best = runs
        .iter()
        .max_by(|a, b| a.psnr_db.total_cmp(&b.psnr_db))
        .expect("tau grid is never empty");
    Ok(CellResult {
        image: cell.stem.clone(),
        method: cell.method.to_string(),
        degradation: cfg.degradation_label(sigma),
        sigma_effective: sigma,
        seed,
        best: TauRun {
            tau: best.tau,
            psnr_db: best.psnr_db,
            iterations: best.iterations,
            converged: best.converged,
        },
        runs,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_sources(&args.opts)?;
    let methods: Vec<Method> = match &args.methods {
        None => Method::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(|m| m.trim().parse())
            .collect::<Result<_>>()?,
    };
    let grid = tau_grid(args.tau_min, args.tau_max, args.tau_points)?;

    let mut images: Vec<PathBuf> = fs::read_dir(&args.corpus)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("tvf")
            )
        })
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Error::Config(format!(
            "no .png/.tvf images under {}",
            args.corpus.display()
        )));
    }

    let cells_dir = args.out_dir.join("cells");
    fs::create_dir_all(&cells_dir)?;

    let cells: Vec<BenchCell> = images
        .iter()
        .flat_map(|path| {
            let stem = file_stem(path);
            methods.iter().map(move |&method| BenchCell {
                stem: stem.clone(),
                clean_path: path.clone(),
                method,
            })
        })
        .collect();

    let dir_cache = Mutex::new(HashMap::new());
    let graph_cache = Mutex::new(HashMap::new());
    let run_cell = |cell: &BenchCell| -> Result<()> {
        let cell_path = cells_dir.join(format!("{}__{}.json", cell.stem, cell.method));
        if !args.fresh && cell_path.exists() {
            // finished cells survive interrupted sweeps
            if let Ok(text) = fs::read_to_string(&cell_path) {
                if serde_json::from_str::<CellResult>(&text).is_ok() {
                    println!("skip {} ({}): already done", cell.stem, cell.method);
                    return Ok(());
                }
            }
        }
        let result = bench_cell(&cfg, cell, &grid, &dir_cache, &graph_cache)?;
        write_json(&cell_path, &result)?;
        println!(
            "cell {} ({}): best tau {} -> {:.2} dB ({:.0}s)",
            cell.stem, cell.method, result.best.tau, result.best.psnr_db, result.elapsed_s
        );
        Ok(())
    };

    if args.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cells.par_iter().map(run_cell).collect::<Result<Vec<_>>>()
        })?;
    } else {
        for cell in &cells {
            run_cell(cell)?;
        }
    }

    // aggregate every finished cell (including ones from earlier sweeps)
    let mut rows = Vec::new();
    for entry in fs::read_dir(&cells_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let cell: CellResult = serde_json::from_str(&text).map_err(|e| {
            Error::UnsupportedFormat(format!("{}: {e}", path.display()))
        })?;
        rows.push(ReportRow {
            image: cell.image,
            method: cell.method,
            degradation: cell.degradation,
            tau: cell.best.tau,
            psnr_db: cell.best.psnr_db,
            elapsed_s: cell.elapsed_s,
            iterations: cell.best.iterations,
        });
    }
    let table_path = args.out_dir.join("bench.csv");
    fs::write(&table_path, render_report(rows))?;
    println!("wrote {}", table_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parse arguments, dispatch, and map errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Degrade(args) => cmd_degrade(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Restore(args) => cmd_restore(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

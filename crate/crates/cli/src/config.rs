//! Experiment configuration files (TOML).
//!
//! ```toml
//! command = "simulate"
//! master_seed = 7
//!
//! [grid]
//! dim = 1
//! points = 1024
//!
//! [noise]
//! alpha = 0.5
//!
//! [coefficients]
//! sigma = { kind = "power_abs", gamma = 0.75 }
//!
//! [run]
//! t_end = 0.25
//! dt = 1e-4
//! ic = { profile = "bump", centre = [0.5], width = 0.1 }
//! ```
//!
//! Every section has defaults; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shelab_core::analysis::SweepConfig;
use shelab_core::heat_kernel::LemmaId;
use shelab_core::noise::{NoiseSpec, ZeroModePolicy};
use shelab_core::snapshot;
use shelab_core::solver::{Coefficient, CoefficientSpec, SolveConfig};
use shelab_core::yw::{eps_grid, EpsGrid};
use shelab_core::{Field, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Paired,
    Sweep,
    VerifyKernels,
    VerifyYw,
    Analyze,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// A rejected configuration: the offending key path and the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    fn new(key: &str, reason: impl fmt::Display) -> Self {
        ConfigError { key: key.to_string(), reason: reason.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.reason)
        } else {
            write!(f, "{}: {}", self.key, self.reason)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dim: usize,
    pub extent: f64,
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { dim: 1, extent: 1.0, points: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub alpha: f64,
    pub zero_mode_policy: ZeroModePolicy,
    pub include_constant_part: bool,
    pub stream_id: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { alpha: 0.5, zero_mode_policy: ZeroModePolicy::default(), include_constant_part: false, stream_id: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientSection {
    pub sigma: Coefficient,
    pub b: Coefficient,
    /// Declared Hölder exponent of `σ`; defaults to the shape's own.
    pub gamma: Option<f64>,
    pub growth_c: Option<f64>,
}

impl Default for CoefficientSection {
    fn default() -> Self {
        CoefficientSection { sigma: Coefficient::PowerAbs { gamma: 0.75 }, b: Coefficient::Zero, gamma: None, growth_c: None }
    }
}

/// Named initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    Constant { value: f64 },
    /// `height·exp(−|x − centre|²/width²)` with periodic distance.
    Bump {
        centre: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        height: f64,
    },
    /// `amplitude·sin(2π·mode·x_1/L)`.
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_usize")]
        mode: usize,
    },
    /// A snapshot file.
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Zero
    }
}

impl Profile {
    pub fn build(&self, grid: &TorusGrid) -> shelab_core::Result<Field> {
        match self {
            Profile::Zero => Ok(Field::zeros(*grid)),
            Profile::Constant { value } => Field::new(*grid, vec![*value; grid.len()]),
            Profile::Bump { centre, width, height } => Field::from_fn(*grid, |x| {
                let r2: f64 = (0..grid.dim()).map(|a| grid.periodic_delta(centre[a], x[a]).powi(2)).sum();
                height * (-r2 / (width * width)).exp()
            }),
            Profile::Sine { amplitude, mode } => Field::from_fn(*grid, |x| {
                amplitude * (2.0 * std::f64::consts::PI * *mode as f64 * x[0] / grid.extent()).sin()
            }),
            Profile::File { path } => {
                let (f, _) = snapshot::load(path)?;
                if f.grid() != grid {
                    return Err(shelab_core::Error::GridMismatch);
                }
                Ok(f)
            }
        }
    }

    fn check(&self, key: &str, grid: &TorusGrid) -> Result<(), ConfigError> {
        match self {
            Profile::Bump { centre, width, .. } => {
                if centre.len() != grid.dim() {
                    return Err(ConfigError::new(&format!("{key}.centre"), "needs one coordinate per axis"));
                }
                if !(*width > 0.0) {
                    return Err(ConfigError::new(&format!("{key}.width"), "must be positive"));
                }
            }
            Profile::File { path } if !path.exists() => {
                return Err(ConfigError::new(&format!("{key}.path"), format!("file {} does not exist", path.display())));
            }
            _ => {}
        }
        self.build(grid).map(|_| ()).map_err(|e| ConfigError::new(key, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub t_end: f64,
    pub dt: f64,
    pub ic: Profile,
    pub snapshot_every: usize,
    pub history_depth: usize,
    #[serde(rename = "truncation_K")]
    pub truncation_k: Option<f64>,
    pub noise_substeps: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            t_end: 0.25,
            dt: 1e-4,
            ic: Profile::Zero,
            snapshot_every: 0,
            history_depth: 1,
            truncation_k: None,
            noise_substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairedSection {
    /// Added uniformly to the first initial condition when `ic2` is absent.
    pub perturbation: f64,
    pub ic2: Option<Profile>,
}

impl Default for PairedSection {
    fn default() -> Self {
        PairedSection { perturbation: 1e-12, ic2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub lemmas: Vec<LemmaId>,
    pub alpha: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        use LemmaId::*;
        KernelSection { lemmas: vec![A_1, L4_2, L4_3, L4_4, L4_5, A_2a, A_2b, A_3], alpha: 0.5 }
    }
}

/// Yamada–Watanabe constants. `gamma` and `alpha` default to the
/// coefficient and noise sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YwSection {
    pub n_max: u32,
    pub quad_resolution: usize,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub eps1: Option<f64>,
    pub eps0: Option<f64>,
}

impl Default for YwSection {
    fn default() -> Self {
        YwSection { n_max: 6, quad_resolution: 1024, gamma: None, alpha: None, eps1: None, eps0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Snapshot files of `u`, in any order.
    pub inputs: Vec<PathBuf>,
    /// Structure-function lags in sites; defaults to a geometric ladder.
    pub lags: Option<Vec<usize>>,
    /// Gradient-bin occupancy at the last snapshot for this `n`.
    pub bins_n: Option<u32>,
    /// Box half-width; defaults to half the domain.
    #[serde(rename = "K0")]
    pub k0: Option<f64>,
    /// `I^n` path over the snapshots for this `n`.
    pub monitor_n: Option<u32>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { inputs: Vec::new(), lags: None, bins_n: None, k0: None, monitor_n: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub paired: PairedSection,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub kernels: KernelSection,
    pub yw: Option<YwSection>,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Parses a configuration from TOML text; parse errors carry line numbers.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::new("", format!("parse error: {e}")))
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<TorusGrid, ConfigError> {
        TorusGrid::new(self.grid.dim, self.grid.extent, self.grid.points).map_err(|e| ConfigError::new("grid", e))
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        let mut spec = NoiseSpec::new(self.noise.alpha).with_seed(self.master_seed, self.noise.stream_id);
        spec.zero_mode_policy = self.noise.zero_mode_policy;
        spec.include_constant_part = self.noise.include_constant_part;
        spec
    }

    pub fn coefficient_spec(&self) -> CoefficientSpec {
        let c = &self.coefficients;
        let mut spec = CoefficientSpec::new(c.sigma.clone(), c.b.clone());
        if let Some(g) = c.gamma {
            spec.gamma_meta = g;
        }
        if let Some(k) = c.growth_c {
            spec.growth_c = k;
        }
        spec
    }

    pub fn solve_config(&self) -> Result<SolveConfig, ConfigError> {
        let grid = self.grid()?;
        let ic = self.run.ic.build(&grid).map_err(|e| ConfigError::new("run.ic", e))?;
        let r = &self.run;
        let mut sc = SolveConfig::new(grid, self.noise_spec(), self.coefficient_spec(), r.t_end, r.dt, ic);
        sc.snapshot_every = r.snapshot_every;
        sc.history_depth = r.history_depth;
        sc.truncation_k = r.truncation_k;
        sc.noise_substeps = r.noise_substeps;
        Ok(sc)
    }

    /// The `ε` grid when `yw.eps1` and `yw.eps0` are given.
    pub fn eps_grid(&self) -> Result<Option<EpsGrid>, ConfigError> {
        let Some(yw) = &self.yw else { return Ok(None) };
        let (Some(e1), Some(e0)) = (yw.eps1, yw.eps0) else {
            if yw.eps1.is_some() != yw.eps0.is_some() {
                return Err(ConfigError::new("yw.eps0", "eps1 and eps0 must be given together"));
            }
            return Ok(None);
        };
        let gamma = yw.gamma.unwrap_or_else(|| self.coefficient_spec().gamma_meta);
        let alpha = yw.alpha.unwrap_or(self.noise.alpha);
        eps_grid(gamma, alpha, e1, e0).map(Some).map_err(|e| {
            let key = match &e {
                shelab_core::Error::InvalidParameter { name, .. } => format!("yw.{name}"),
                _ => "yw".to_string(),
            };
            ConfigError::new(&key, e)
        })
    }

    /// Checks every parameter the command will use, before any work.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = self.grid()?;
        shelab_core::noise::validate_alpha(self.noise.alpha, grid.dim()).map_err(|e| ConfigError::new("noise.alpha", e))?;
        self.eps_grid()?;
        match self.command {
            Command::Simulate | Command::Paired => {
                self.run.ic.check("run.ic", &grid)?;
                if let Some(ic2) = &self.paired.ic2 {
                    ic2.check("paired.ic2", &grid)?;
                }
                if !self.paired.perturbation.is_finite() {
                    return Err(ConfigError::new("paired.perturbation", "must be finite"));
                }
                let sc = self.solve_config()?;
                sc.validate().map_err(|e| ConfigError::new(solve_key(&e), e))?;
            }
            Command::Sweep => {
                let Some(s) = &self.sweep else {
                    return Err(ConfigError::new("sweep", "section required for the sweep command"));
                };
                s.validate().map_err(|e| ConfigError::new("sweep", e))?;
            }
            Command::VerifyKernels => {
                shelab_core::noise::validate_alpha(self.kernels.alpha, 1)
                    .map_err(|e| ConfigError::new("kernels.alpha", e))?;
                if self.kernels.lemmas.is_empty() {
                    return Err(ConfigError::new("kernels.lemmas", "list at least one lemma"));
                }
            }
            Command::VerifyYw => {
                let yw = self.yw.clone().unwrap_or_default();
                if yw.n_max == 0 || yw.n_max > 37 {
                    return Err(ConfigError::new("yw.n_max", "must lie in 1..=37 (a_n underflows beyond)"));
                }
                if yw.quad_resolution < 16 {
                    return Err(ConfigError::new("yw.quad_resolution", "must be at least 16"));
                }
            }
            Command::Analyze => {
                let a = &self.analyze;
                if a.inputs.is_empty() {
                    return Err(ConfigError::new("analyze.inputs", "list at least one snapshot file"));
                }
                if let Some(p) = a.inputs.iter().find(|p| !p.exists()) {
                    return Err(ConfigError::new("analyze.inputs", format!("file {} does not exist", p.display())));
                }
                if a.bins_n.is_some() && self.eps_grid()?.is_none() {
                    return Err(ConfigError::new("yw.eps1", "gradient bins need yw.eps1 and yw.eps0"));
                }
                if let Some(k0) = a.k0 {
                    if !(k0 > 0.0) {
                        return Err(ConfigError::new("analyze.K0", "must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output directory removed.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        let text = serde_json::to_string(&canon).expect("configuration serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `<output_dir>/<command>-<first 12 digest characters>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-{}", self.command, &self.digest()[..12]))
    }
}

fn solve_key(e: &shelab_core::Error) -> &'static str {
    match e {
        shelab_core::Error::InvalidParameter { name, .. } => match *name {
            "alpha" => "noise.alpha",
            "dt" => "run.dt",
            "t_end" => "run.t_end",
            "noise_substeps" => "run.noise_substeps",
            "truncation_K" => "run.truncation_K",
            "gamma" | "sigma" => "coefficients.sigma",
            "growth_c" => "coefficients.growth_c",
            _ => "run",
        },
        _ => "run",
    }
}

//! Study configuration: flat keys plus one `[simulator]` table.

use std::path::{Path, PathBuf};

use dyncal::design::UnitBox;
use dyncal::emulator::DEFAULT_GAMMA;
use dyncal::gp::{PriorConfig, DEFAULT_STARTS};
use dyncal::inverse::Extraction;
use dyncal::simulators::{equidistant_grid, Simulator, SimulatorKind, SimulatorSpec, SubprocessSimulator, DEFAULT_NOISE_RATIO, DEFAULT_SERIES_LEN};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    FixedXStar,
    RedrawXStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionChoice {
    Esl2d,
    Naive,
    Both,
}

impl ExtractionChoice {
    /// Methods in output order; the first drives progress tracking.
    pub fn methods(self) -> Vec<Extraction> {
        match self {
            Self::Esl2d => vec![Extraction::Esl2d],
            Self::Naive => vec![Extraction::Naive],
            Self::Both => vec![Extraction::Esl2d, Extraction::Naive],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    /// A built-in name or `subprocess`.
    pub name: String,
    pub series_len: Option<usize>,
    pub program: Option<PathBuf>,
    #[serde(default)]
    pub args: Vec<String>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    pub workers: Option<usize>,
    pub n0: Option<usize>,
    pub n_new: Option<usize>,
    pub m1: Option<usize>,
    pub m2: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_target_mode")]
    pub target_mode: TargetMode,
    /// Native-scale signal input, required for `fixed_x_star`.
    pub x_star: Option<Vec<f64>>,
    #[serde(default = "default_extraction")]
    pub extraction: ExtractionChoice,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_starts")]
    pub fit_starts: usize,
    /// Design size for `extract-compare`; defaults to `n0`.
    pub n_design: Option<usize>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_prior")]
    pub alpha_i: f64,
    #[serde(default = "default_prior")]
    pub beta_i: f64,
    #[serde(default = "default_prior")]
    pub alpha: f64,
    #[serde(default = "default_prior")]
    pub beta: f64,
    pub simulator: SimulatorConfig,
}

fn one() -> usize {
    1
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_rho() -> f64 {
    DEFAULT_NOISE_RATIO
}
fn default_target_mode() -> TargetMode {
    TargetMode::FixedXStar
}
fn default_extraction() -> ExtractionChoice {
    ExtractionChoice::Esl2d
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_starts() -> usize {
    DEFAULT_STARTS
}
fn default_grid_size() -> usize {
    200
}
fn default_mc_samples() -> usize {
    50_000
}
fn default_prior() -> f64 {
    0.1
}

/// Everything a subcommand needs, with defaults resolved against `q`.
pub struct Resolved {
    pub config: StudyConfig,
    pub simulator: Box<dyn Simulator>,
    pub n0: usize,
    pub n_new: usize,
    pub m1: usize,
    pub m2: usize,
    pub n_design: usize,
    pub priors: PriorConfig,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn priors(&self) -> PriorConfig {
        PriorConfig { alpha_i: self.alpha_i, beta_i: self.beta_i, alpha: self.alpha, beta: self.beta, ..PriorConfig::default() }
    }

    fn build_simulator(&self) -> Result<Box<dyn Simulator>, CliError> {
        let s = &self.simulator;
        let l = s.series_len.unwrap_or(DEFAULT_SERIES_LEN);
        if l == 0 {
            return Err(CliError::Config("simulator.series_len must be positive".into()));
        }
        if s.name == "subprocess" {
            let need = |field: &str| CliError::Config(format!("simulator.{field} is required for subprocess simulators"));
            let program = s.program.clone().ok_or_else(|| need("program"))?;
            let lower = s.lower.clone().ok_or_else(|| need("lower"))?;
            let upper = s.upper.clone().ok_or_else(|| need("upper"))?;
            let t0 = s.t_start.ok_or_else(|| need("t_start"))?;
            let t1 = s.t_end.ok_or_else(|| need("t_end"))?;
            let bounds = UnitBox::new(lower, upper).map_err(|e| CliError::Config(format!("simulator bounds: {e}")))?;
            return Ok(Box::new(SubprocessSimulator { program, args: s.args.clone(), bounds, times: equidistant_grid(t0, t1, l) }));
        }
        let kind: SimulatorKind = s.name.parse().map_err(|e| CliError::Config(format!("simulator.name: {e}")))?;
        if s.program.is_some() || s.lower.is_some() || s.upper.is_some() || s.t_start.is_some() || s.t_end.is_some() {
            return Err(CliError::Config(format!("simulator '{}' is built in; only series_len may be set", s.name)));
        }
        Ok(Box::new(SimulatorSpec::with_len(kind, l)))
    }

    pub fn resolve(self) -> Result<Resolved, CliError> {
        let simulator = self.build_simulator()?;
        let q = simulator.input_dim();
        let bad = |m: String| Err(CliError::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0,1), got {}", self.gamma));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be nonnegative, got {}", self.rho));
        }
        if self.grid_size == 0 {
            return bad("grid_size must be positive".into());
        }
        if self.mc_samples < 2 {
            return bad("mc_samples must be at least 2".into());
        }
        if self.fit_starts == 0 {
            return bad("fit_starts must be positive".into());
        }
        match (&self.x_star, self.target_mode) {
            (None, TargetMode::FixedXStar) => return bad("x_star is required when target_mode = \"fixed_x_star\"".into()),
            (Some(x), _) if x.len() != q => return bad(format!("x_star has {} entries, simulator takes {q}", x.len())),
            _ => {}
        }
        let priors = self.priors();
        priors.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let n0 = self.n0.unwrap_or(6 * q);
        if n0 < 2 {
            return bad(format!("n0 must be at least 2, got {n0}"));
        }
        let m1 = self.m1.unwrap_or(2000 * q);
        let m2 = self.m2.unwrap_or(2000 * q);
        if m1 == 0 || m2 == 0 {
            return bad("m1 and m2 must be positive".into());
        }
        let n_design = self.n_design.unwrap_or(n0);
        if n_design < 2 {
            return bad(format!("n_design must be at least 2, got {n_design}"));
        }
        Ok(Resolved { n0, n_new: self.n_new.unwrap_or(12 * q), m1, m2, n_design, priors, simulator, config: self })
    }
}

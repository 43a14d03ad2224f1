//! Closed-form test simulators, an external-program simulator, and noisy
//! target generation.

use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::UnitBox;
use crate::error::{Error, Result};
use crate::rng;

/// A deterministic map from `[0,1]^q` to a series of fixed length.
pub trait Simulator: Sync {
    fn bounds(&self) -> &UnitBox;
    fn times(&self) -> &[f64];
    /// Evaluates at a point of the unit cube.
    fn evaluate(&self, x_unit: &[f64]) -> Result<Vec<f64>>;

    fn input_dim(&self) -> usize {
        self.bounds().dim()
    }

    fn series_len(&self) -> usize {
        self.times().len()
    }
}

pub fn example1(x: f64, t: f64) -> f64 {
    ((8.0 * x + 6.0) * PI * t).sin() / (2.0 * t) + (t - 1.0).powi(4)
}

fn gramacy_lee(u: f64) -> f64 {
    (10.0 * PI * u).sin() / (2.0 * u) + (u - 1.0).powi(4)
}

/// `g(t) g(2x + 0.5)`; any response matrix built from it has rank one.
pub fn gfun_separable(x: f64, t: f64) -> f64 {
    gramacy_lee(t) * gramacy_lee(2.0 * x + 0.5)
}

pub fn harari(x: &[f64], t: f64) -> f64 {
    (3.0 * x[0] * t + t).exp() * (6.0 * x[1] * t + 2.0 * t - 8.0 * x[2] - 6.0).cos()
}

/// Two-spill pollutant concentration; `x = (M, D, L, tau, s)`.
pub fn environmental(x: &[f64], t: f64) -> f64 {
    let (m, d, l, tau, s) = (x[0], x[1], x[2], x[3], x[4]);
    let first = m / (d * t).sqrt() * (-s * s / (4.0 * d * t)).exp();
    let second = if tau < t {
        let dt = d * (t - tau);
        m / dt.sqrt() * (-(s - l) * (s - l) / (4.0 * dt)).exp()
    } else {
        0.0
    };
    first + second
}

/// `l` equidistant points from `start` to `end`, both included.
pub fn equidistant_grid(start: f64, end: f64, l: usize) -> Vec<f64> {
    match l {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..l).map(|i| start + (end - start) * i as f64 / (l - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorKind {
    Example1,
    GfunSeparable,
    Harari,
    Environmental,
}

impl std::str::FromStr for SimulatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(Self::Example1),
            "gfun_separable" => Ok(Self::GfunSeparable),
            "harari" => Ok(Self::Harari),
            "environmental" => Ok(Self::Environmental),
            other => Err(Error::InvalidInput(format!("unknown simulator '{other}'"))),
        }
    }
}

pub const DEFAULT_SERIES_LEN: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorSpec {
    pub kind: SimulatorKind,
    pub bounds: UnitBox,
    pub times: Vec<f64>,
}

impl SimulatorSpec {
    pub fn new(kind: SimulatorKind) -> Self {
        Self::with_len(kind, DEFAULT_SERIES_LEN)
    }

    pub fn with_len(kind: SimulatorKind, l: usize) -> Self {
        let (lower, upper, t0, t1) = match kind {
            SimulatorKind::Example1 | SimulatorKind::GfunSeparable => (vec![0.0], vec![1.0], 0.5, 2.5),
            SimulatorKind::Harari => (vec![0.0; 3], vec![1.0; 3], 0.0, 1.0),
            SimulatorKind::Environmental => {
                (vec![7.0, 0.02, 0.01, 30.01, 0.0], vec![13.0, 0.12, 3.0, 30.295, 3.0], 0.3, 60.0)
            }
        };
        Self {
            kind,
            bounds: UnitBox { lower, upper },
            times: equidistant_grid(t0, t1, l),
        }
    }

    pub fn value(&self, x_native: &[f64], t: f64) -> f64 {
        match self.kind {
            SimulatorKind::Example1 => example1(x_native[0], t),
            SimulatorKind::GfunSeparable => gfun_separable(x_native[0], t),
            SimulatorKind::Harari => harari(x_native, t),
            SimulatorKind::Environmental => environmental(x_native, t),
        }
    }

    pub fn series_native(&self, x_native: &[f64]) -> Vec<f64> {
        self.times.iter().map(|&t| self.value(x_native, t)).collect()
    }
}

impl Simulator for SimulatorSpec {
    fn bounds(&self) -> &UnitBox {
        &self.bounds
    }

    fn times(&self) -> &[f64] {
        &self.times
    }

    fn evaluate(&self, x_unit: &[f64]) -> Result<Vec<f64>> {
        if x_unit.len() != self.input_dim() {
            return Err(Error::Simulator { x: x_unit.to_vec(), message: "wrong input dimension".into() });
        }
        Ok(self.series_native(&self.bounds.to_native(x_unit)))
    }
}

/// External simulator: the program reads `q` native-scale values on one
/// stdin line and prints `L` response values on one stdout line.
#[derive(Debug, Clone)]
pub struct SubprocessSimulator {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub bounds: UnitBox,
    pub times: Vec<f64>,
}

impl Simulator for SubprocessSimulator {
    fn bounds(&self) -> &UnitBox {
        &self.bounds
    }

    fn times(&self) -> &[f64] {
        &self.times
    }

    fn evaluate(&self, x_unit: &[f64]) -> Result<Vec<f64>> {
        let fail = |message: String| Error::Simulator { x: x_unit.to_vec(), message };
        let native = self.bounds.to_native(x_unit);
        let line = native.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" ");
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(format!("cannot start {}: {e}", self.program.display())))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(format!("{line}\n").as_bytes())
            .map_err(|e| fail(format!("writing input: {e}")))?;
        let out = child.wait_with_output().map_err(|e| fail(format!("waiting: {e}")))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let values = first
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| fail(format!("unparsable output: {e}")))?;
        if values.len() != self.times.len() {
            return Err(fail(format!("printed {} values, expected {}", values.len(), self.times.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite output".into()));
        }
        Ok(values)
    }
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
}

pub const DEFAULT_NOISE_RATIO: f64 = 1.0 / 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub x_star: Vec<f64>,
    pub rho: f64,
    pub seed: u64,
    pub signal: Vec<f64>,
    pub xi: Vec<f64>,
    /// `rho * Var(signal)`.
    pub noise_variance: f64,
    pub realized_noise_variance: f64,
}

/// `xi = y(x_star) + e`, `e ~ N(0, rho Var(y(x_star)) I)`; `x_star` is native-scale.
pub fn make_target(sim: &dyn Simulator, x_star: &[f64], rho: f64, seed: u64) -> Result<TargetSpec> {
    let b = sim.bounds();
    if x_star.len() != b.dim() {
        return Err(Error::InvalidInput(format!("x_star has {} entries, simulator takes {}", x_star.len(), b.dim())));
    }
    if let Some(j) = (0..b.dim()).find(|&j| x_star[j] < b.lower[j] || x_star[j] > b.upper[j]) {
        return Err(Error::InvalidInput(format!("x_star[{j}] = {} outside [{}, {}]", x_star[j], b.lower[j], b.upper[j])));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("noise ratio must be nonnegative, got {rho}")));
    }
    let signal = sim.evaluate(&b.to_unit(x_star))?;
    let noise_variance = rho * sample_variance(&signal);
    let sd = noise_variance.sqrt();
    let mut r = rng::stream(seed, "target-noise", 0);
    let noise: Vec<f64> = (0..signal.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            sd * z
        })
        .collect();
    let xi = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
    Ok(TargetSpec {
        x_star: x_star.to_vec(),
        rho,
        seed,
        signal,
        xi,
        noise_variance,
        realized_noise_variance: sample_variance(&noise),
    })
}

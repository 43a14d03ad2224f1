//! Sequential calibration loop and extraction of the inverse solution.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{maximin_lhd, random_candidates, Design, DEFAULT_RESTARTS};
use crate::emulator::{DesignSet, FitOptions, Prediction, SvdGpModel, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::gp::{PriorConfig, DEFAULT_STARTS};
use crate::rng::derive_seed;
use crate::saei::{build_cgf_context, expected_discrepancy, saei_from_context};
use crate::simulators::Simulator;

/// Decrease of the running minimum discrepancy, floored at zero.
pub fn improvement(delta_min: f64, delta_x: f64) -> f64 {
    (delta_min - delta_x).max(0.0)
}

/// Squared L2 distance between two series.
pub fn discrepancy(xi: &[f64], y: &[f64]) -> f64 {
    xi.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `||xi - y||^2 / ||xi - mean(xi)||^2`.
pub fn normalized_discrepancy(xi: &[f64], y: &[f64]) -> Result<f64> {
    if xi.len() != y.len() || xi.is_empty() {
        return Err(Error::InvalidInput(format!("series lengths {} and {} differ or are empty", xi.len(), y.len())));
    }
    let mean = xi.iter().sum::<f64>() / xi.len() as f64;
    let denom: f64 = xi.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom == 0.0 {
        return Err(Error::Domain("target series is constant".into()));
    }
    Ok(discrepancy(xi, y) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    Esl2d,
    Naive,
}

impl std::str::FromStr for Extraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esl2d" => Ok(Self::Esl2d),
            "naive" => Ok(Self::Naive),
            other => Err(Error::InvalidInput(format!("unknown extraction '{other}'"))),
        }
    }
}

/// `sum d_i^2 (c_hat_i - c_xi_i)^2`, the x-dependent part of `||xi - B c_hat||^2`.
pub fn naive_objective(model: &SvdGpModel, pred: &Prediction, c_xi: &DVector<f64>) -> f64 {
    (0..model.p).map(|i| model.d[i] * model.d[i] * (pred.c_hat[i] - c_xi[i]).powi(2)).sum()
}

/// Naive objective plus `sum d_i^2 s2_i`.
pub fn esl2d_objective(model: &SvdGpModel, pred: &Prediction, c_xi: &DVector<f64>) -> f64 {
    naive_objective(model, pred, c_xi) + (0..model.p).map(|i| model.d[i] * model.d[i] * pred.s2[i]).sum::<f64>()
}

/// Objective of `method` at every candidate.
pub fn extraction_scores(model: &SvdGpModel, xi: &DVector<f64>, candidates: &Design, method: Extraction) -> Vec<f64> {
    let c_xi = model.target_coefficients(xi);
    (0..candidates.len())
        .into_par_iter()
        .map(|j| {
            let pred = model.predict(candidates.point(j));
            match method {
                Extraction::Esl2d => esl2d_objective(model, &pred, &c_xi),
                Extraction::Naive => naive_objective(model, &pred, &c_xi),
            }
        })
        .collect()
}

/// Index of the smallest value; ties go to the lowest index.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = j;
        }
    }
    best
}

pub fn extract(model: &SvdGpModel, xi: &DVector<f64>, candidates: &Design, method: Extraction) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("candidate set is empty".into()));
    }
    let scores = extraction_scores(model, xi, candidates, method);
    Ok(candidates.point(argmin(&scores)).to_vec())
}

pub fn extract_naive(model: &SvdGpModel, xi: &DVector<f64>, candidates: &Design) -> Result<Vec<f64>> {
    extract(model, xi, candidates, Extraction::Naive)
}

pub fn extract_esl2d(model: &SvdGpModel, xi: &DVector<f64>, candidates: &Design) -> Result<Vec<f64>> {
    extract(model, xi, candidates, Extraction::Esl2d)
}

/// The run's extraction candidates: `m2` uniform points from the "extract" stream.
pub fn extraction_set(m2: usize, q: usize, seed: u64) -> Design {
    random_candidates(m2, q, derive_seed(seed, "extract", 0))
}

/// Minimum L-infinity distance below which a candidate counts as a repeat.
pub const DUPLICATE_TOL: f64 = 1e-9;

fn is_duplicate(design: &Design, x: &[f64]) -> bool {
    design
        .points()
        .any(|p| p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < DUPLICATE_TOL)
}

pub struct CalibrationProblem<'a> {
    pub simulator: &'a dyn Simulator,
    pub xi: Vec<f64>,
    pub n0: usize,
    pub n_new: usize,
    pub m1: usize,
    pub m2: usize,
    pub gamma: f64,
    pub priors: PriorConfig,
    pub seed: u64,
    pub extraction: Extraction,
    /// Multi-start count for each coefficient-GP fit.
    pub fit_starts: usize,
    /// Also extract and evaluate a solution after every iteration.
    pub track_progress: bool,
}

impl<'a> CalibrationProblem<'a> {
    /// `n0 = 6q`, `n_new = 12q`, `M1 = M2 = 2000q`.
    pub fn new(simulator: &'a dyn Simulator, xi: Vec<f64>, seed: u64) -> Self {
        let q = simulator.input_dim();
        Self {
            simulator,
            xi,
            n0: 6 * q,
            n_new: 12 * q,
            m1: 2000 * q,
            m2: 2000 * q,
            gamma: DEFAULT_GAMMA,
            priors: PriorConfig::default(),
            seed,
            extraction: Extraction::Esl2d,
            fit_starts: DEFAULT_STARTS,
            track_progress: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 < 2 {
            return Err(Error::InvalidInput(format!("n0 must be at least 2, got {}", self.n0)));
        }
        if self.m1 == 0 || self.m2 == 0 {
            return Err(Error::InvalidInput("candidate set sizes must be positive".into()));
        }
        if self.xi.len() != self.simulator.series_len() {
            return Err(Error::InvalidInput(format!(
                "target has {} values, simulator produces {}",
                self.xi.len(),
                self.simulator.series_len()
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        self.priors.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Acquired point in unit coordinates.
    pub x: Vec<f64>,
    pub delta: f64,
    pub delta_min: f64,
    pub saei: f64,
    pub wall_ms: f64,
    /// Normalized discrepancy of the solution extracted after this iteration.
    pub d_xi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub initial_delta_min: f64,
    pub initial_d_xi: Option<f64>,
    pub records: Vec<IterationRecord>,
    /// Extracted solution in unit coordinates.
    pub final_x: Vec<f64>,
    pub final_d_xi: f64,
}

fn evaluate_at(sim: &dyn Simulator, xi: &[f64], x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let y = sim.evaluate(x)?;
    if y.len() != xi.len() {
        return Err(Error::Simulator { x: x.to_vec(), message: format!("returned {} values, expected {}", y.len(), xi.len()) });
    }
    let delta = discrepancy(xi, &y);
    Ok((y, delta))
}

fn extract_and_score(problem: &CalibrationProblem, model: &SvdGpModel, xi: &DVector<f64>, candidates: &Design) -> Result<(Vec<f64>, f64)> {
    let x_hat = extract(model, xi, candidates, problem.extraction)?;
    let (y, _) = evaluate_at(problem.simulator, &problem.xi, &x_hat)?;
    Ok((x_hat, normalized_discrepancy(&problem.xi, &y)?))
}

/// Index chosen among candidates: highest score first (lowest index on
/// ties), skipping repeats of existing design points. When every score is
/// zero the candidate with the smallest expected discrepancy is taken.
fn choose_candidate(model: &SvdGpModel, xi: &DVector<f64>, design: &Design, candidates: &Design, scores: &[f64]) -> Option<usize> {
    let all_zero = scores.iter().all(|s| *s <= 0.0);
    let keys: Vec<f64> = if all_zero {
        (0..candidates.len())
            .into_par_iter()
            .map(|j| expected_discrepancy(model, &model.predict(candidates.point(j)), xi))
            .collect()
    } else {
        scores.iter().map(|s| -s).collect()
    };
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    order.into_iter().find(|&j| !is_duplicate(design, candidates.point(j)))
}

pub fn run_calibration(problem: &CalibrationProblem) -> Result<(SvdGpModel, RunTrace)> {
    problem.validate()?;
    let sim = problem.simulator;
    let q = sim.input_dim();
    let xi = DVector::from_column_slice(&problem.xi);
    let times = sim.times().to_vec();

    let design = maximin_lhd(problem.n0, q, derive_seed(problem.seed, "design", 0), DEFAULT_RESTARTS);
    let mut columns = Vec::with_capacity(design.len());
    let mut delta_min = f64::INFINITY;
    for x in design.points() {
        let (y, delta) = evaluate_at(sim, &problem.xi, x)?;
        delta_min = delta_min.min(delta);
        columns.push(y);
    }
    let mut data = DesignSet::from_columns(design, &columns, times)?;
    let fit_opts = |index: u64| FitOptions {
        gamma: problem.gamma,
        priors: problem.priors,
        starts: problem.fit_starts,
        seed: derive_seed(problem.seed, "fit", index),
    };
    let mut model = SvdGpModel::fit_with(&data, &fit_opts(0), None)?;
    let extract_set = extraction_set(problem.m2, q, problem.seed);

    let initial_delta_min = delta_min;
    let initial_d_xi = if problem.track_progress {
        Some(extract_and_score(problem, &model, &xi, &extract_set)?.1)
    } else {
        None
    };

    let mut records = Vec::with_capacity(problem.n_new);
    for it in 1..=problem.n_new {
        let start = Instant::now();
        let candidates = random_candidates(problem.m1, q, derive_seed(problem.seed, "acq", it as u64));
        let scores = (0..candidates.len())
            .into_par_iter()
            .map(|j| {
                let pred = model.predict(candidates.point(j));
                match saei_from_context(&build_cgf_context(&model, &pred, &xi), delta_min) {
                    Ok(v) => Ok(v),
                    Err(Error::NoBracket { .. }) => Ok(0.0),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let j = choose_candidate(&model, &xi, &data.x, &candidates, &scores)
            .ok_or_else(|| Error::InvalidInput("every candidate repeats an existing design point".into()))?;
        let x_new = candidates.point(j).to_vec();
        let (y, delta) = evaluate_at(sim, &problem.xi, &x_new)?;
        delta_min = delta_min.min(delta);
        data.push(&x_new, &y)?;
        model = SvdGpModel::fit_with(&data, &fit_opts(it as u64), Some(&model))?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let d_xi = if problem.track_progress {
            Some(extract_and_score(problem, &model, &xi, &extract_set)?.1)
        } else {
            None
        };
        records.push(IterationRecord { iteration: it, x: x_new, delta, delta_min, saei: scores[j], wall_ms, d_xi });
    }

    let (final_x, final_d_xi) = match records.last().and_then(|r| r.d_xi) {
        Some(d) => (extract(&model, &xi, &extract_set, problem.extraction)?, d),
        None => extract_and_score(problem, &model, &xi, &extract_set)?,
    };
    let trace = RunTrace { initial_delta_min, initial_d_xi, records, final_x, final_d_xi };
    Ok((model, trace))
}

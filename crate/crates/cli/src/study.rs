//! Replicated studies behind each subcommand. Every function writes its CSVs
//! into the configured output directory and also returns the in-memory result.

use std::path::Path;
use std::time::Instant;

use dyncal::design::{maximin_lhd, random_candidates, DEFAULT_RESTARTS};
use dyncal::emulator::FitOptions;
use dyncal::inverse::{discrepancy, extract, extraction_set, normalized_discrepancy, run_calibration};
use dyncal::persist::{load_model, save_model, write_design_set};
use dyncal::rng::{derive_seed, stream};
use dyncal::saei::{exact_ei_rank1, mc_ei, saei};
use dyncal::simulators::{equidistant_grid, make_target};
use dyncal::{CalibrationProblem, DesignSet, Extraction, RunTrace, SvdGpModel, TargetSpec};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{Resolved, TargetMode};
use crate::output::{num, opt_num, quantile, x_header, Table};
use crate::CliError;

pub fn replication_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, "replication", r as u64)
}

pub fn method_name(m: Extraction) -> &'static str {
    match m {
        Extraction::Esl2d => "esl2d",
        Extraction::Naive => "naive",
    }
}

/// Runs `f` on a pool sized by `workers` (all cores when unset).
pub fn with_pool<T: Send>(res: &Resolved, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = res.config.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Target of replication `rseed`; redraw mode samples `x*` uniformly in the box.
pub fn target_for(res: &Resolved, rseed: u64) -> Result<TargetSpec, CliError> {
    let bounds = res.simulator.bounds();
    let x_star = match res.config.target_mode {
        TargetMode::FixedXStar => res.config.x_star.clone().expect("validated at resolve"),
        TargetMode::RedrawXStar => {
            let mut r = stream(rseed, "x-star", 0);
            let u: Vec<f64> = (0..bounds.dim()).map(|_| r.random::<f64>()).collect();
            bounds.to_native(&u)
        }
    };
    Ok(make_target(res.simulator.as_ref(), &x_star, res.config.rho, derive_seed(rseed, "target", 0))?)
}

/// Space-filling design of size `n`, evaluated and fitted; also returns the
/// smallest discrepancy to `xi` among the runs.
fn fit_design(res: &Resolved, rseed: u64, n: usize, xi: &[f64]) -> Result<(DesignSet, SvdGpModel, f64), CliError> {
    let sim = res.simulator.as_ref();
    let design = maximin_lhd(n, sim.input_dim(), derive_seed(rseed, "design", 0), DEFAULT_RESTARTS);
    let cols = design.points().map(|p| sim.evaluate(p)).collect::<Result<Vec<_>, _>>()?;
    let delta_min = cols.iter().map(|c| discrepancy(xi, c)).fold(f64::INFINITY, f64::min);
    let data = DesignSet::from_columns(design, &cols, sim.times().to_vec())?;
    let opts = FitOptions { gamma: res.config.gamma, priors: res.priors, starts: res.config.fit_starts, seed: derive_seed(rseed, "fit", 0) };
    let model = SvdGpModel::fit_with(&data, &opts, None)?;
    Ok((data, model, delta_min))
}

fn ensure_out_dir(res: &Resolved) -> Result<&Path, CliError> {
    let dir = res.config.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct FinalSolution {
    pub method: Extraction,
    /// Native-scale solution.
    pub x: Vec<f64>,
    pub d_xi: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub index: usize,
    pub x_star: Vec<f64>,
    pub trace: RunTrace,
    pub finals: Vec<FinalSolution>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuartileRow {
    pub iteration: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub replications: Vec<ReplicationOutcome>,
    /// Quartiles of log D_xi across replications after each acquisition,
    /// for the first configured extraction method.
    pub quartiles: Vec<QuartileRow>,
}

impl StudySummary {
    pub fn final_d_xi(&self, method: Extraction) -> Vec<f64> {
        self.replications
            .iter()
            .filter_map(|r| r.finals.iter().find(|f| f.method == method).map(|f| f.d_xi))
            .collect()
    }

    pub fn initial_d_xi(&self) -> Vec<f64> {
        self.replications.iter().filter_map(|r| r.trace.initial_d_xi).collect()
    }
}

fn quartiles_of(values: &[f64], iteration: usize) -> QuartileRow {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    QuartileRow { iteration, q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) }
}

fn calibrate_one(res: &Resolved, index: usize) -> Result<ReplicationOutcome, CliError> {
    let rseed = replication_seed(res.config.seed, index);
    let target = target_for(res, rseed)?;
    let sim = res.simulator.as_ref();
    let methods = res.config.extraction.methods();
    let problem = CalibrationProblem {
        simulator: sim,
        xi: target.xi.clone(),
        n0: res.n0,
        n_new: res.n_new,
        m1: res.m1,
        m2: res.m2,
        gamma: res.config.gamma,
        priors: res.priors,
        seed: rseed,
        extraction: methods[0],
        fit_starts: res.config.fit_starts,
        track_progress: true,
    };
    let (model, trace) = run_calibration(&problem)?;
    let bounds = sim.bounds();
    let mut finals = vec![FinalSolution { method: methods[0], x: bounds.to_native(&trace.final_x), d_xi: trace.final_d_xi }];
    let xi = DVector::from_column_slice(&target.xi);
    for &m in &methods[1..] {
        let x = extract(&model, &xi, &extraction_set(res.m2, sim.input_dim(), rseed), m)?;
        let d_xi = normalized_discrepancy(&target.xi, &sim.evaluate(&x)?)?;
        finals.push(FinalSolution { method: m, x: bounds.to_native(&x), d_xi });
    }
    Ok(ReplicationOutcome { index, x_star: target.x_star, trace, finals })
}

fn write_replication(res: &Resolved, dir: &Path, out: &ReplicationOutcome) -> Result<(), CliError> {
    let q = res.simulator.input_dim();
    let bounds = res.simulator.bounds();
    let mut header = vec!["iter".to_string()];
    header.extend(x_header("", q));
    header.extend(["delta", "delta_min", "saei", "wall_ms", "d_xi"].map(String::from));
    let mut trace = Table::new("trace-v1", header);
    for r in &out.trace.records {
        let mut row = vec![r.iteration.to_string()];
        row.extend(bounds.to_native(&r.x).into_iter().map(num));
        let wall = if res.config.record_wall_time { r.wall_ms } else { 0.0 };
        row.extend([num(r.delta), num(r.delta_min), num(r.saei), num(wall), opt_num(r.d_xi)]);
        trace.push(row);
    }
    trace.write(&dir.join(format!("trace_{:03}.csv", out.index)))?;

    let mut header = vec!["method".to_string()];
    header.extend(x_header("", q));
    header.push("D_xi".into());
    let mut sol = Table::new("solution-v1", header);
    for f in &out.finals {
        let mut row = vec![method_name(f.method).to_string()];
        row.extend(f.x.iter().copied().map(num));
        row.push(num(f.d_xi));
        sol.push(row);
    }
    sol.write(&dir.join(format!("solution_{:03}.csv", out.index)))
}

pub fn calibrate(res: &Resolved) -> Result<StudySummary, CliError> {
    let dir = ensure_out_dir(res)?;
    let outcomes = with_pool(res, || {
        (0..res.config.replications)
            .into_par_iter()
            .map(|r| {
                let out = calibrate_one(res, r)?;
                write_replication(res, dir, &out)?;
                Ok(out)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })??;

    let quartiles = (1..=res.n_new)
        .map(|it| {
            let logs: Vec<f64> = outcomes.iter().filter_map(|o| o.trace.records[it - 1].d_xi).map(f64::ln).collect();
            quartiles_of(&logs, it)
        })
        .collect::<Vec<_>>();

    let q = res.simulator.input_dim();
    let mut header = vec!["replication".to_string(), "method".to_string()];
    header.extend(x_header("star_", q));
    header.extend(["initial_log_d_xi", "final_log_d_xi"].map(String::from));
    let mut summary = Table::new("summary-v1", header);
    for o in &outcomes {
        for (k, f) in o.finals.iter().enumerate() {
            let mut row = vec![o.index.to_string(), method_name(f.method).to_string()];
            row.extend(o.x_star.iter().copied().map(num));
            let initial = if k == 0 { o.trace.initial_d_xi.map(f64::ln) } else { None };
            row.extend([opt_num(initial), num(f.d_xi.ln())]);
            summary.push(row);
        }
    }
    summary.write(&dir.join("summary.csv"))?;

    let mut qt = Table::new("quartiles-v1", ["iter", "q1", "median", "q3"].map(String::from).to_vec());
    for r in &quartiles {
        qt.push(vec![r.iteration.to_string(), num(r.q1), num(r.median), num(r.q3)]);
    }
    qt.write(&dir.join("quartiles.csv"))?;
    Ok(StudySummary { replications: outcomes, quartiles })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EiRow {
    /// Native-scale input.
    pub x: Vec<f64>,
    pub saei: f64,
    pub exact_ei: Option<f64>,
    pub mc: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone)]
pub struct EiMap {
    pub rows: Vec<EiRow>,
    pub p: usize,
    pub delta_min: f64,
    pub saei_secs: f64,
    pub mc_secs: f64,
}

/// saEI, exact rank-one EI (when `p = 1`) and Monte-Carlo EI over a grid,
/// for the emulator fitted to the initial design of replication 0.
pub fn ei_map(res: &Resolved) -> Result<EiMap, CliError> {
    let dir = ensure_out_dir(res)?;
    let sim = res.simulator.as_ref();
    let q = sim.input_dim();
    let rseed = replication_seed(res.config.seed, 0);
    let target = target_for(res, rseed)?;
    let (_, model, delta_min) = fit_design(res, rseed, res.n0, &target.xi)?;
    let xi = DVector::from_column_slice(&target.xi);
    let grid: Vec<Vec<f64>> = if q == 1 {
        equidistant_grid(0.0, 1.0, res.config.grid_size).into_iter().map(|x| vec![x]).collect()
    } else {
        random_candidates(res.config.grid_size, q, derive_seed(rseed, "ei-map", 0)).to_rows()
    };

    let (sa, saei_secs) = with_pool(res, || {
        let start = Instant::now();
        let v = grid
            .par_iter()
            .map(|x| match saei(&model, x, &xi, delta_min) {
                Err(dyncal::Error::NoBracket { .. }) => Ok(0.0),
                other => other,
            })
            .collect::<Result<Vec<f64>, _>>();
        (v, start.elapsed().as_secs_f64())
    })?;
    let sa = sa?;
    let exact: Vec<Option<f64>> = if model.p == 1 {
        grid.iter().map(|x| exact_ei_rank1(&model, x, &xi, delta_min).map(Some)).collect::<Result<_, _>>()?
    } else {
        vec![None; grid.len()]
    };
    let n_mc = res.config.mc_samples;
    let (mc, mc_secs) = with_pool(res, || {
        let start = Instant::now();
        let v: Vec<(f64, f64)> =
            grid.par_iter().enumerate().map(|(k, x)| mc_ei(&model, x, &xi, delta_min, n_mc, derive_seed(rseed, "mc", k as u64))).collect();
        (v, start.elapsed().as_secs_f64())
    })?;

    let bounds = sim.bounds();
    let rows: Vec<EiRow> = (0..grid.len())
        .map(|k| EiRow { x: bounds.to_native(&grid[k]), saei: sa[k], exact_ei: exact[k], mc: mc[k].0, mc_se: mc[k].1 })
        .collect();
    let mut header = x_header("", q);
    header.extend(["saei", "exact_ei", "mc_ei", "mc_se"].map(String::from));
    let mut t = Table::new("ei-map-v1", header);
    for r in &rows {
        let mut row: Vec<String> = r.x.iter().copied().map(num).collect();
        row.extend([num(r.saei), opt_num(r.exact_ei), num(r.mc), num(r.mc_se)]);
        t.push(row);
    }
    t.write(&dir.join("ei_map.csv"))?;
    let timing = format!(
        "saei_total_s={saei_secs:.6} mc_total_s={mc_secs:.6} ratio={:.6} points={} mc_samples={n_mc}\n",
        saei_secs / mc_secs,
        rows.len()
    );
    std::fs::write(dir.join("timing.txt"), &timing)?;
    print!("{timing}");
    Ok(EiMap { rows, p: model.p, delta_min, saei_secs, mc_secs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub replication: usize,
    pub x_naive: Vec<f64>,
    pub x_esl2d: Vec<f64>,
    pub log_d_xi_naive: f64,
    pub log_d_xi_esl2d: f64,
}

/// Fits each replication on a space-filling design of `n_design` runs and
/// extracts the solution with both criteria from the same candidate set.
pub fn extract_compare(res: &Resolved) -> Result<Vec<CompareRow>, CliError> {
    let dir = ensure_out_dir(res)?;
    let sim = res.simulator.as_ref();
    let q = sim.input_dim();
    let rows = with_pool(res, || {
        (0..res.config.replications)
            .into_par_iter()
            .map(|r| {
                let rseed = replication_seed(res.config.seed, r);
                let target = target_for(res, rseed)?;
                let (_, model, _) = fit_design(res, rseed, res.n_design, &target.xi)?;
                let xi = DVector::from_column_slice(&target.xi);
                let cands = extraction_set(res.m2, q, rseed);
                let mut logs = [0.0; 2];
                let mut xs = [Vec::new(), Vec::new()];
                for (k, m) in [Extraction::Naive, Extraction::Esl2d].into_iter().enumerate() {
                    let x = extract(&model, &xi, &cands, m)?;
                    logs[k] = normalized_discrepancy(&target.xi, &sim.evaluate(&x)?)?.ln();
                    xs[k] = sim.bounds().to_native(&x);
                }
                let [x_naive, x_esl2d] = xs;
                Ok(CompareRow { replication: r, x_naive, x_esl2d, log_d_xi_naive: logs[0], log_d_xi_esl2d: logs[1] })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })??;
    let mut header = vec!["replication".to_string()];
    header.extend(x_header("naive_", q));
    header.extend(x_header("esl2d_", q));
    header.extend(["log_d_xi_naive", "log_d_xi_esl2d"].map(String::from));
    let mut t = Table::new("extract-compare-v1", header);
    for r in &rows {
        let mut row = vec![r.replication.to_string()];
        row.extend(r.x_naive.iter().chain(&r.x_esl2d).copied().map(num));
        row.extend([num(r.log_d_xi_naive), num(r.log_d_xi_esl2d)]);
        t.push(row);
    }
    t.write(&dir.join("extract_compare.csv"))?;
    Ok(rows)
}

/// Fits the emulator on replication 0's initial design and saves it with
/// its training data.
pub fn fit(res: &Resolved) -> Result<SvdGpModel, CliError> {
    let dir = ensure_out_dir(res)?;
    let rseed = replication_seed(res.config.seed, 0);
    let target = target_for(res, rseed)?;
    let (data, model, _) = with_pool(res, || fit_design(res, rseed, res.n0, &target.xi))??;
    save_model(&model, &dir.join("model.svdgp"))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("design.csv"))?);
    write_design_set(&data, &mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub t: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Predictive mean and marginal standard deviation of the series at the
/// native-scale input `x`.
pub fn predict(res: &Resolved, model_path: &Path, x: &[f64]) -> Result<Vec<PredictionRow>, CliError> {
    let dir = ensure_out_dir(res)?;
    let model = load_model(model_path)?;
    let sim = res.simulator.as_ref();
    if x.len() != model.input_dim() || x.len() != sim.input_dim() {
        return Err(CliError::Config(format!("--x has {} values, the model takes {}", x.len(), model.input_dim())));
    }
    if model.series_len() != sim.series_len() {
        return Err(CliError::Config(format!("model series length {} differs from the configured {}", model.series_len(), sim.series_len())));
    }
    let pred = model.predict(&sim.bounds().to_unit(x));
    let cov = model.predictive_covariance(&pred);
    let rows: Vec<PredictionRow> = sim
        .times()
        .iter()
        .enumerate()
        .map(|(t, &time)| PredictionRow { t: time, mean: pred.mean[t], sd: cov[(t, t)].max(0.0).sqrt() })
        .collect();
    let mut table = Table::new("prediction-v1", ["t", "mean", "sd"].map(String::from).to_vec());
    for r in &rows {
        table.push(vec![num(r.t), num(r.mean), num(r.sd)]);
    }
    table.write(&dir.join("prediction.csv"))?;
    Ok(rows)
}

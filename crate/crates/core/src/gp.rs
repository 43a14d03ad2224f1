//! Single-coefficient Gaussian process: anisotropic Gaussian correlation and
//! empirical-Bayes (MAP) estimation of its inverse squared lengthscales.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Gamma};

use crate::design::{maximin_lhd, Design};
use crate::error::{Error, Result};

/// Per-dimension weights `theta_j` of `exp(-sum_j theta_j (x1_j - x2_j)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta: Vec<f64>,
}

impl KernelParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidInput(format!("kernel weights must be positive and finite: {theta:?}")));
        }
        Ok(Self { theta })
    }

    pub fn isotropic(q: usize, theta: f64) -> Self {
        Self { theta: vec![theta; q] }
    }
}

/// Hyperpriors: `sigma_i^2 ~ IG(alpha_i/2, beta_i/2)`, `sigma^2 ~ IG(alpha/2, beta/2)`
/// and `1/theta_ij ~ Gamma(gamma_shape, gamma_rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub alpha_i: f64,
    pub beta_i: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { alpha_i: 0.1, beta_i: 0.1, alpha: 0.1, beta: 0.1, gamma_shape: 1.5, gamma_rate: 0.1 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha_i", self.alpha_i),
            ("beta_i", self.beta_i),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_shape", self.gamma_shape),
            ("gamma_rate", self.gamma_rate),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn log_theta_prior(&self, theta: &[f64]) -> f64 {
        let gamma = Gamma::new(self.gamma_shape, self.gamma_rate).expect("validated prior");
        theta.iter().map(|t| gamma.ln_pdf(1.0 / t)).sum()
    }
}

pub fn gaussian_correlation(x1: &[f64], x2: &[f64], params: &KernelParams) -> f64 {
    debug_assert_eq!(x1.len(), x2.len());
    let s: f64 = x1
        .iter()
        .zip(x2)
        .zip(&params.theta)
        .map(|((a, b), t)| t * (a - b) * (a - b))
        .sum();
    (-s).exp()
}

pub fn correlation_matrix(x: &Design, params: &KernelParams, jitter: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + jitter;
        for j in 0..i {
            let c = gaussian_correlation(x.point(i), x.point(j), params);
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
    }
    k
}

/// Base jitter is `1e-8 * mean(diag K)`; the unit-diagonal correlation makes that `1e-8`.
pub const BASE_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;

/// Cholesky of the correlation matrix, escalating the diagonal jitter by 10x
/// from [`BASE_JITTER`] up to [`MAX_JITTER`].
pub fn factorize(x: &Design, params: &KernelParams) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = BASE_JITTER;
    let base = correlation_matrix(x, params, 0.0);
    loop {
        let mut k = base.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Ok((chol, jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(Error::FactorizationFailure { jitter });
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    }
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn objective_from_factor(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>, theta: &[f64], priors: &PriorConfig) -> (f64, DVector<f64>) {
    let n = v.len() as f64;
    let kinv_v = chol.solve(v);
    let psi = v.dot(&kinv_v).max(0.0);
    let value = -0.5 * log_det(chol) - 0.5 * (priors.alpha_i + n) * (0.5 * (priors.beta_i + psi)).ln()
        + priors.log_theta_prior(theta);
    (value, kinv_v)
}

/// Log of `|K|^{-1/2} ((beta_i + psi)/2)^{-(alpha_i+N)/2} pi(theta)`, `psi = v' K^{-1} v`.
pub fn map_objective(params: &KernelParams, x: &Design, v: &[f64], priors: &PriorConfig) -> Result<f64> {
    let (chol, _) = factorize(x, params)?;
    let v = DVector::from_column_slice(v);
    Ok(objective_from_factor(&chol, &v, &params.theta, priors).0)
}

/// A coefficient process conditioned on its training values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedCoefficientGp {
    pub theta_hat: KernelParams,
    /// `(beta_i + psi_i) / (alpha_i + N)`.
    pub sigma2_i_scale: f64,
    /// Lower Cholesky factor of `K_i` (jitter included).
    pub chol_k: DMatrix<f64>,
    pub kinv_v: DVector<f64>,
    pub jitter: f64,
    pub log_objective: f64,
}

impl FittedCoefficientGp {
    /// Conditions on `v` at fixed `params` without optimizing.
    pub fn condition(x: &Design, v: &[f64], params: KernelParams, priors: &PriorConfig) -> Result<Self> {
        let (chol, jitter) = factorize(x, &params)?;
        let vv = DVector::from_column_slice(v);
        let (log_objective, kinv_v) = objective_from_factor(&chol, &vv, &params.theta, priors);
        let psi = vv.dot(&kinv_v).max(0.0);
        Ok(Self {
            theta_hat: params,
            sigma2_i_scale: (priors.beta_i + psi) / (priors.alpha_i + v.len() as f64),
            chol_k: chol.unpack(),
            kinv_v,
            jitter,
            log_objective,
        })
    }

    /// Correlations between `x0` and the training inputs. The nugget is part
    /// of the correlation function, so an exact training input gets `1 + jitter`
    /// and the fit interpolates there.
    pub fn cross_correlation(&self, x: &Design, x0: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.points().map(|p| {
                let r = gaussian_correlation(p, x0, &self.theta_hat);
                if p == x0 {
                    r + self.jitter
                } else {
                    r
                }
            }),
        )
    }

    /// Predictive mean `k' K^{-1} v` and variance
    /// `scale * max(0, 1 - k' K^{-1} k)` at `x0`.
    pub fn predict(&self, x: &Design, x0: &[f64]) -> (f64, f64) {
        let k = self.cross_correlation(x, x0);
        let mean = k.dot(&self.kinv_v);
        let w = self
            .chol_k
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a positive diagonal");
        let reduction = (1.0 - w.norm_squared()).max(0.0);
        (mean, self.sigma2_i_scale * reduction)
    }
}

pub const LOG_THETA_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
pub const LOG_THETA_MAX: f64 = 6.907_755_278_982_137; // ln 1e3
pub const DEFAULT_STARTS: usize = 5;

pub fn fit_coefficient_gp(x: &Design, v: &[f64], priors: &PriorConfig, starts: usize, seed: u64) -> Result<FittedCoefficientGp> {
    fit_coefficient_gp_warm(x, v, priors, starts, seed, None)
}

/// Multi-start MAP fit. With `warm`, the first start is the supplied
/// weights and the other `starts - 1` come from the log-box LHD.
pub fn fit_coefficient_gp_warm(
    x: &Design,
    v: &[f64],
    priors: &PriorConfig,
    starts: usize,
    seed: u64,
    warm: Option<&KernelParams>,
) -> Result<FittedCoefficientGp> {
    if x.len() < 2 {
        return Err(Error::InvalidInput("coefficient GP needs at least two training points".into()));
    }
    if v.len() != x.len() {
        return Err(Error::InvalidInput(format!("{} responses for {} design points", v.len(), x.len())));
    }
    priors.validate()?;
    let q = x.dim();
    let vv = DVector::from_column_slice(v);
    let objective = |log_theta: &[f64]| -> f64 {
        let theta: Vec<f64> = log_theta.iter().map(|l| l.exp()).collect();
        match factorize(x, &KernelParams { theta: theta.clone() }) {
            Ok((chol, _)) => objective_from_factor(&chol, &vv, &theta, priors).0,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut initial: Vec<Vec<f64>> = Vec::with_capacity(starts.max(1));
    if let Some(w) = warm.filter(|w| w.theta.len() == q) {
        initial.push(w.theta.iter().map(|t| t.ln().clamp(LOG_THETA_MIN, LOG_THETA_MAX)).collect());
    }
    let fresh = starts.max(1) - initial.len();
    if fresh > 0 {
        let lhd = maximin_lhd(fresh, q, seed, 3);
        for p in lhd.points() {
            initial.push(p.iter().map(|u| LOG_THETA_MIN + u * (LOG_THETA_MAX - LOG_THETA_MIN)).collect());
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &initial {
        let (point, value) = nelder_mead_max(&objective, start, LOG_THETA_MIN, LOG_THETA_MAX);
        if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, point));
        }
    }
    let (_, log_theta) = best.ok_or(Error::FactorizationFailure { jitter: MAX_JITTER })?;
    let theta = KernelParams { theta: log_theta.iter().map(|l| l.exp()).collect() };
    FittedCoefficientGp::condition(x, v, theta, priors)
}

/// Box-projected Nelder-Mead maximizer. Returns the best vertex seen, so
/// the result is never worse than the start.
fn nelder_mead_max<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let n = start.len();
    let clamp = |p: Vec<f64>| -> Vec<f64> { p.into_iter().map(|v| v.clamp(lo, hi)).collect() };
    // Work with the negated objective so the textbook minimization steps apply.
    let eval = |p: &[f64]| -> f64 {
        let v = f(p);
        if v.is_nan() { f64::INFINITY } else { -v }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let s0 = clamp(start.to_vec());
    simplex.push((s0.clone(), eval(&s0)));
    for i in 0..n {
        let mut p = s0.clone();
        p[i] = if p[i] + 1.0 <= hi { p[i] + 1.0 } else { p[i] - 1.0 };
        let p = clamp(p);
        let fp = eval(&p);
        simplex.push((p, fp));
    }
    let max_evals = 200 * n + 200;
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let spread = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if f_best.is_finite() && (f_worst - f_best).abs() <= 1e-10 * (1.0 + f_best.abs()) && spread < 1e-6 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clamp(centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect())
        };
        let reflected = along(-1.0);
        let f_r = eval(&reflected);
        evals += 1;
        if f_r < simplex[0].1 {
            let expanded = along(-2.0);
            let f_e = eval(&expanded);
            evals += 1;
            simplex[n] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
        } else if f_r < simplex[n - 1].1 {
            simplex[n] = (reflected, f_r);
        } else {
            let contracted = if f_r < simplex[n].1 { along(-0.5) } else { along(0.5) };
            let f_c = eval(&contracted);
            evals += 1;
            if f_c < f_r.min(simplex[n].1) {
                simplex[n] = (contracted, f_c);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let p = clamp(best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect());
                    let fp = eval(&p);
                    *vertex = (p, fp);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (p, v) = simplex.swap_remove(0);
    (p, -v)
}

//! SVD-based Gaussian-process emulator for time-series valued simulators.
//!
//! The response matrix `Y` (L x N) is decomposed as `U D V'`; the leading
//! `p` left singular vectors scaled by their singular values form the basis
//! `B = U* D*`, and each row of `V*` (the training values of one
//! coefficient) gets an independent zero-mean GP. At a new input the series
//! is Gaussian with mean `B c_hat(x)` and covariance
//! `B diag(s2(x)) B' + sigma2_hat I_L`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::gp::{fit_coefficient_gp_warm, FittedCoefficientGp, PriorConfig, DEFAULT_STARTS};
use crate::rng;

/// Training inputs paired with their simulated series.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    pub x: Design,
    /// `L x N`, one column per design point.
    pub y: DMatrix<f64>,
    /// Time stamps of the rows of `y`. Metadata only.
    pub times: Vec<f64>,
}

impl DesignSet {
    pub fn new(x: Design, y: DMatrix<f64>, times: Vec<f64>) -> Result<Self> {
        if y.ncols() != x.len() {
            return Err(Error::InvalidInput(format!("{} response columns for {} design points", y.ncols(), x.len())));
        }
        if y.nrows() == 0 {
            return Err(Error::InvalidInput("series length must be at least 1".into()));
        }
        if times.len() != y.nrows() {
            return Err(Error::InvalidInput(format!("{} time stamps for series of length {}", times.len(), y.nrows())));
        }
        Ok(Self { x, y, times })
    }

    pub fn from_columns(x: Design, columns: &[Vec<f64>], times: Vec<f64>) -> Result<Self> {
        let l = times.len();
        if columns.iter().any(|c| c.len() != l) {
            return Err(Error::InvalidInput(format!("every series must have length {l}")));
        }
        let y = DMatrix::from_fn(l, columns.len(), |t, j| columns[j][t]);
        Self::new(x, y, times)
    }

    pub fn series_len(&self) -> usize {
        self.y.nrows()
    }

    pub fn push(&mut self, x: &[f64], series: &[f64]) -> Result<()> {
        if series.len() != self.series_len() {
            return Err(Error::InvalidInput(format!("series of length {} (expected {})", series.len(), self.series_len())));
        }
        self.x.push(x);
        let n = self.y.ncols();
        self.y = std::mem::replace(&mut self.y, DMatrix::zeros(0, 0)).insert_column(n, 0.0);
        self.y.column_mut(n).copy_from_slice(series);
        Ok(())
    }
}

/// Thin SVD `Y = U diag(s) V'` with `s` decreasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn of(y: &DMatrix<f64>) -> Result<Self> {
        let (l, n) = y.shape();
        let m = faer::Mat::<f64>::from_fn(l, n, |i, j| y[(i, j)]);
        let svd = m.thin_svd().map_err(|e| Error::Domain(format!("SVD did not converge: {e:?}")))?;
        let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
        let k = l.min(n);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
        Ok(Self {
            u: DMatrix::from_fn(l, k, |t, i| fu[(t, order[i])]),
            s: order.iter().map(|&i| fs[i].max(0.0)).collect(),
            v: DMatrix::from_fn(n, k, |j, i| fv[(j, order[i])]),
        })
    }
}

/// Smallest `m` whose leading singular values explain strictly more than
/// `gamma` of their total.
pub fn choose_p(d_full: &[f64], gamma: f64) -> usize {
    let total: f64 = d_full.iter().sum();
    assert!(total > 0.0, "choose_p needs a positive singular value");
    let mut acc = 0.0;
    for (i, d) in d_full.iter().enumerate() {
        acc += d;
        if acc / total > gamma {
            return i + 1;
        }
    }
    d_full.len()
}

pub const DEFAULT_GAMMA: f64 = 0.95;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub gamma: f64,
    pub priors: PriorConfig,
    pub starts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, priors: PriorConfig::default(), starts: DEFAULT_STARTS, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdGpModel {
    /// `L x p`, columns `d_i u_i`.
    pub b: DMatrix<f64>,
    pub u_star: DMatrix<f64>,
    /// Retained singular values, decreasing.
    pub d: DVector<f64>,
    /// Every singular value of `Y`, decreasing.
    pub d_full: DVector<f64>,
    /// `p x N`; row `i` holds the training values of coefficient `i`.
    pub v_star: DMatrix<f64>,
    pub gps: Vec<FittedCoefficientGp>,
    pub sigma2_hat: f64,
    pub priors: PriorConfig,
    pub x: Design,
    pub p: usize,
    pub gamma: f64,
}

/// Coefficient-level predictive law at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub c_hat: DVector<f64>,
    pub s2: DVector<f64>,
    pub mean: DVector<f64>,
    pub noise: f64,
}

impl SvdGpModel {
    pub fn fit(data: &DesignSet, gamma: f64, priors: PriorConfig, seed: u64) -> Result<Self> {
        Self::fit_with(data, &FitOptions { gamma, priors, seed, ..FitOptions::default() }, None)
    }

    /// Full refit. With `previous`, each coefficient search is warm-started
    /// from the previous weights of the same index.
    pub fn fit_with(data: &DesignSet, opts: &FitOptions, previous: Option<&SvdGpModel>) -> Result<Self> {
        let n = data.x.len();
        let l = data.series_len();
        if n < 2 {
            return Err(Error::InvalidInput("emulator needs at least two runs".into()));
        }
        if !(opts.gamma > 0.0 && opts.gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0,1), got {}", opts.gamma)));
        }
        opts.priors.validate()?;

        let svd = ThinSvd::of(&data.y)?;
        let (u, v) = (&svd.u, &svd.v);
        let d_full = DVector::from_column_slice(&svd.s);
        if d_full[0] <= 0.0 {
            return Err(Error::InvalidInput("response matrix is identically zero".into()));
        }
        let p = choose_p(d_full.as_slice(), opts.gamma);

        let u_star = DMatrix::from_fn(l, p, |t, i| u[(t, i)]);
        let d = d_full.rows(0, p).into_owned();
        let v_star = DMatrix::from_fn(p, n, |i, j| v[(j, i)]);
        let b = DMatrix::from_fn(l, p, |t, i| u_star[(t, i)] * d[i]);

        let residual = &data.y - &b * &v_star;
        let rr = residual.norm_squared();
        let sigma2_hat = (rr + opts.priors.beta) / ((n * l) as f64 + opts.priors.alpha + 2.0);

        let gps = (0..p)
            .into_par_iter()
            .map(|i| {
                let v: Vec<f64> = v_star.row(i).iter().copied().collect();
                let warm = previous.and_then(|m| m.gps.get(i)).map(|g| &g.theta_hat);
                fit_coefficient_gp_warm(&data.x, &v, &opts.priors, opts.starts, rng::derive_seed(opts.seed, "coef-gp", i as u64), warm)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            b,
            u_star,
            d,
            d_full,
            v_star,
            gps,
            sigma2_hat,
            priors: opts.priors,
            x: data.x.clone(),
            p,
            gamma: opts.gamma,
        })
    }

    pub fn series_len(&self) -> usize {
        self.b.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.x.dim()
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn predict(&self, x0: &[f64]) -> Prediction {
        assert_eq!(x0.len(), self.input_dim(), "input dimension mismatch");
        let mut c_hat = DVector::zeros(self.p);
        let mut s2 = DVector::zeros(self.p);
        for (i, gp) in self.gps.iter().enumerate() {
            let (m, v) = gp.predict(&self.x, x0);
            c_hat[i] = m;
            s2[i] = v;
        }
        let mean = &self.b * &c_hat;
        Prediction { c_hat, s2, mean, noise: self.sigma2_hat }
    }

    /// `B diag(s2) B' + sigma2_hat I_L`.
    pub fn predictive_covariance(&self, pred: &Prediction) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.series_len(), self.p, |t, i| self.b[(t, i)] * pred.s2[i]);
        let mut cov = &scaled * self.b.transpose();
        cov = 0.5 * (&cov + cov.transpose());
        for t in 0..cov.nrows() {
            cov[(t, t)] += pred.noise;
        }
        cov
    }

    /// Coordinates of the target in the retained basis, `D*^-2 B' xi`.
    pub fn target_coefficients(&self, xi: &DVector<f64>) -> DVector<f64> {
        let mut c = self.b.transpose() * xi;
        for i in 0..self.p {
            c[i] /= self.d[i] * self.d[i];
        }
        c
    }

    /// `xi' (I - U* U*') xi`: energy of the target outside the basis.
    pub fn out_of_basis_energy(&self, xi: &DVector<f64>) -> f64 {
        let proj = self.u_star.transpose() * xi;
        (xi.norm_squared() - proj.norm_squared()).max(0.0)
    }
}

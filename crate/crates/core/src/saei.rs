//! Expected improvement in squared L2 discrepancy under the emulator's
//! Gaussian predictive law.
//!
//! With `z = xi - y(x) ~ N(mu, Sigma)`, `Sigma = B diag(s2) B' + sigma2 I`,
//! the discrepancy `delta = z'z` is a quadratic form whose cumulant
//! generating function has a closed form in the basis coordinates. The
//! expected improvement `E[(delta_min - delta)+]` is approximated by a
//! saddlepoint expansion around the root of `kappa'(s) = delta_min`.
//! For rank-one models the exact value is available, and a Monte-Carlo
//! estimator is provided as an independent reference.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::emulator::{Prediction, SvdGpModel};
use crate::error::{Error, Result};
use crate::inverse::improvement;
use crate::rng;
use crate::special::{mills_ratio, norm_cdf, norm_pdf, skew_bracket, INV_SQRT_2PI};

/// Everything needed to evaluate `kappa` and its derivatives at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct CgfContext {
    /// `xi - B c_hat`.
    pub mu: DVector<f64>,
    /// `B' mu`.
    pub mu_b: DVector<f64>,
    pub mu_sq: f64,
    pub sigma2_hat: f64,
    /// Coefficient variances `s2_i`.
    pub s2: DVector<f64>,
    /// `s2_i d_i^2 + sigma2_hat`.
    pub sig_tilde2: DVector<f64>,
    pub d2s2: DVector<f64>,
    pub l: usize,
    pub p: usize,
    /// Supremum of the admissible `s`; infinite for a point mass.
    pub s_max: f64,
}

impl CgfContext {
    pub fn new(mu: DVector<f64>, mu_b: DVector<f64>, d: &[f64], s2: DVector<f64>, sigma2_hat: f64) -> Self {
        let p = mu_b.len();
        assert_eq!(d.len(), p);
        assert_eq!(s2.len(), p);
        let d2s2 = DVector::from_iterator(p, d.iter().zip(s2.iter()).map(|(d, s)| d * d * s));
        let sig_tilde2 = d2s2.map(|v| v + sigma2_hat);
        let largest = sig_tilde2.iter().copied().fold(sigma2_hat, f64::max);
        let s_max = if largest > 0.0 { 0.5 / largest } else { f64::INFINITY };
        Self { mu_sq: mu.norm_squared(), l: mu.len(), mu, mu_b, sigma2_hat, s2, sig_tilde2, d2s2, p, s_max }
    }

    pub fn is_point_mass(&self) -> bool {
        !self.s_max.is_finite()
    }

    fn check(&self, s: f64) -> Result<()> {
        if s < self.s_max {
            Ok(())
        } else {
            Err(Error::Domain(format!("cgf argument {s} not below s_max {}", self.s_max)))
        }
    }

    fn tail_count(&self) -> f64 {
        (self.l - self.p) as f64
    }

    /// `kappa(s)`, the log moment generating function of the discrepancy.
    pub fn cgf(&self, s: f64) -> Result<f64> {
        self.check(s)?;
        let s0 = self.sigma2_hat;
        let a = 1.0 - 2.0 * s * s0;
        let mut k = -0.5 * self.tail_count() * (-2.0 * s * s0).ln_1p() + s * self.mu_sq / a;
        for i in 0..self.p {
            let st = self.sig_tilde2[i];
            let ai = 1.0 - 2.0 * s * st;
            k += -0.5 * (-2.0 * s * st).ln_1p() + 2.0 * s * s * self.s2[i] * self.mu_b[i] * self.mu_b[i] / (ai * a);
        }
        Ok(k)
    }

    /// First three derivatives of `kappa` at `s`.
    pub fn derivatives(&self, s: f64) -> Result<(f64, f64, f64)> {
        self.check(s)?;
        let h = self.sigma2_hat;
        let h2 = h * h;
        let a = 1.0 - 2.0 * s * h;
        let tail = self.tail_count();
        let mut k1 = self.mu_sq / (a * a) + tail * h / a;
        let mut k2 = 4.0 * h * self.mu_sq / (a * a * a) + tail * 2.0 * h2 / (a * a);
        let mut k3 = 24.0 * h2 * self.mu_sq / (a * a * a * a) + tail * 8.0 * h2 * h / (a * a * a);
        let s2p = s * s;
        let s3p = s2p * s;
        let s4p = s3p * s;
        for i in 0..self.p {
            let t = self.sig_tilde2[i];
            let t2 = t * t;
            let ai = 1.0 - 2.0 * s * t;
            let cm = self.s2[i] * self.mu_b[i] * self.mu_b[i];
            let (ai2, a2) = (ai * ai, a * a);
            k1 += t / ai + 4.0 * cm * s * (1.0 - s * t - s * h) / (ai2 * a2);
            k2 += 2.0 * t2 / ai2
                + 4.0 * cm * (1.0 - 12.0 * s2p * t * h + 8.0 * s3p * t2 * h + 8.0 * s3p * t * h2) / (ai2 * ai * a2 * a);
            k3 += 8.0 * t2 * t / (ai2 * ai)
                + 24.0 * cm
                    * (t + h - 8.0 * s * t * h + 32.0 * s3p * t2 * h2 - 16.0 * s4p * t2 * t * h2 - 16.0 * s4p * t2 * h2 * h)
                    / (ai2 * ai2 * a2 * a2);
        }
        Ok((k1, k2, k3))
    }

    /// `kappa'(0)`, the expected discrepancy.
    pub fn mean(&self) -> f64 {
        self.mu_sq + self.l as f64 * self.sigma2_hat + self.d2s2.sum()
    }
}

pub fn build_cgf_context(model: &SvdGpModel, pred: &Prediction, xi: &DVector<f64>) -> CgfContext {
    assert_eq!(xi.len(), model.series_len(), "target length mismatch");
    let mu = xi - &pred.mean;
    let mu_b = model.b.transpose() * &mu;
    CgfContext::new(mu, mu_b, model.d.as_slice(), pred.s2.clone(), pred.noise)
}

pub fn cgf(ctx: &CgfContext, s: f64) -> Result<f64> {
    ctx.cgf(s)
}

pub fn cgf_derivatives(ctx: &CgfContext, s: f64) -> Result<(f64, f64, f64)> {
    ctx.derivatives(s)
}

/// `E[delta(x)]` in its basis-decomposed form.
pub fn expected_discrepancy(model: &SvdGpModel, pred: &Prediction, xi: &DVector<f64>) -> f64 {
    let c_xi = model.target_coefficients(xi);
    let in_basis: f64 = (0..model.p)
        .map(|i| {
            let d2 = model.d[i] * model.d[i];
            d2 * ((pred.c_hat[i] - c_xi[i]).powi(2) + pred.s2[i])
        })
        .sum();
    model.out_of_basis_energy(xi) + in_basis + pred.noise * model.series_len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleSolution {
    pub s0: f64,
    pub kappa0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub w: f64,
    pub q: f64,
    pub lambda3: f64,
}

const MAX_BRACKET_STEPS: usize = 200;
const MAX_ITERATIONS: usize = 500;

/// Root of `kappa'(s) = delta_min` by Newton steps safeguarded with bisection.
///
/// `kappa'` is strictly increasing on `(-inf, s_max)`, so the root is unique
/// when it exists. The bracket starts at `[-1/(2 mean sig_tilde2), 0.999 s_max]`;
/// the left end doubles and the right end creeps toward `s_max` until the
/// sign changes.
pub fn solve_saddlepoint(ctx: &CgfContext, delta_min: f64, tol: f64) -> Result<SaddleSolution> {
    if !(delta_min > 0.0) {
        return Err(Error::Domain(format!("delta_min must be positive, got {delta_min}")));
    }
    if ctx.is_point_mass() {
        return Err(Error::Domain("predictive law has no positive variance".into()));
    }
    let f = |s: f64| -> Result<(f64, f64)> {
        let (k1, k2, _) = ctx.derivatives(s)?;
        Ok((k1 - delta_min, k2))
    };
    let target = tol * delta_min.max(1.0);

    let positive: Vec<f64> = ctx.sig_tilde2.iter().copied().chain(std::iter::once(ctx.sigma2_hat)).filter(|v| *v > 0.0).collect();
    let mean_var = positive.iter().sum::<f64>() / positive.len() as f64;

    let (f0, _) = f(0.0)?;
    let (mut lo, mut hi);
    if f0 == 0.0 {
        lo = 0.0;
        hi = 0.0;
    } else if f0 > 0.0 {
        hi = 0.0;
        lo = -0.5 / mean_var;
        let mut steps = 0;
        while f(lo)?.0 > 0.0 {
            steps += 1;
            if steps > MAX_BRACKET_STEPS || !lo.is_finite() {
                return Err(Error::NoBracket { delta_min });
            }
            lo *= 2.0;
        }
    } else {
        lo = 0.0;
        hi = 0.999 * ctx.s_max;
        let mut steps = 0;
        while f(hi)?.0 < 0.0 {
            steps += 1;
            let next = ctx.s_max - 0.1 * (ctx.s_max - hi);
            if steps > MAX_BRACKET_STEPS || next >= ctx.s_max || next == hi {
                return Err(Error::NoBracket { delta_min });
            }
            hi = next;
        }
    }

    let mut s = if lo == hi { lo } else { 0.0f64.clamp(lo, hi) };
    let (mut fs, mut dfs) = f(s)?;
    let mut best = (fs.abs(), s);
    for _ in 0..MAX_ITERATIONS {
        if fs.abs() <= target || lo == hi {
            break;
        }
        if fs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let newton = s - fs / dfs;
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == s || hi - lo <= 4.0 * f64::EPSILON * s.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        s = next;
        (fs, dfs) = f(s)?;
        if fs.abs() < best.0 {
            best = (fs.abs(), s);
        }
    }
    let s0 = best.1;
    let kappa0 = ctx.cgf(s0)?;
    let (k1, k2, k3) = ctx.derivatives(s0)?;
    let w2 = (2.0 * (delta_min * s0 - kappa0)).max(0.0);
    Ok(SaddleSolution {
        s0,
        kappa0,
        k1,
        k2,
        k3,
        w: s0.signum() * w2.sqrt(),
        q: s0 * k2.sqrt(),
        lambda3: k3 / k2.powf(1.5),
    })
}

pub const SADDLE_TOL: f64 = 1e-10;

/// Saddlepoint EI from a prepared context.
pub fn saei_from_context(ctx: &CgfContext, delta_min: f64) -> Result<f64> {
    if !(delta_min > 0.0) {
        return Ok(0.0);
    }
    if ctx.is_point_mass() {
        return Ok(improvement(delta_min, ctx.mu_sq));
    }
    let sol = solve_saddlepoint(ctx, delta_min, SADDLE_TOL)?;
    let largest = ctx.sig_tilde2.iter().copied().fold(ctx.sigma2_hat.max(1.0), f64::max);
    let eps_s = 1e-8 / largest;
    let value = if sol.s0.abs() < eps_s {
        let (_, k2_at_0, _) = ctx.derivatives(0.0)?;
        (k2_at_0 * INV_SQRT_2PI * INV_SQRT_2PI).sqrt()
    } else {
        saddle_branches(&sol, delta_min, ctx.mean())
    };
    Ok(value.clamp(0.0, delta_min))
}

/// Positive and negative `s0` expansions. The `e^{Q^2/2}` factors are
/// folded into Mills ratios so large `|Q|` neither overflows nor cancels.
fn saddle_branches(sol: &SaddleSolution, delta_min: f64, mu_delta: f64) -> f64 {
    let damp = (-0.5 * sol.w * sol.w).exp();
    let sk2 = sol.k2.sqrt();
    let abs_q = sol.q.abs();
    let tail = mills_ratio(abs_q) * INV_SQRT_2PI;
    let skew = damp * sk2 * sol.lambda3 / 6.0 * INV_SQRT_2PI * skew_bracket(abs_q);
    if sol.s0 > 0.0 {
        delta_min - mu_delta + damp * (sk2 * INV_SQRT_2PI - sol.s0 * sol.k2 * tail) + skew
    } else {
        damp * (sk2 * INV_SQRT_2PI + sol.s0 * sol.k2 * tail) - skew
    }
}

pub fn saei(model: &SvdGpModel, x: &[f64], xi: &DVector<f64>, delta_min: f64) -> Result<f64> {
    let pred = model.predict(x);
    saei_from_context(&build_cgf_context(model, &pred, xi), delta_min)
}

/// `Phi(b) - Phi(a)` for `a <= b`, using upper tails when both are positive.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}

/// Closed-form EI for a single-basis model.
///
/// Treats the residual variance as zero: the formula integrates the
/// improvement against the coefficient's Gaussian only.
pub fn exact_ei_rank1(model: &SvdGpModel, x: &[f64], xi: &DVector<f64>, delta_min: f64) -> Result<f64> {
    if model.p != 1 {
        return Err(Error::InvalidInput(format!("exact EI needs a rank-one model, got p={}", model.p)));
    }
    let pred = model.predict(x);
    Ok(exact_ei_rank1_at(model, &pred, xi, delta_min))
}

pub(crate) fn exact_ei_rank1_at(model: &SvdGpModel, pred: &Prediction, xi: &DVector<f64>, delta_min: f64) -> f64 {
    let b1 = model.b.column(0);
    let d2 = model.d[0] * model.d[0];
    let xb = xi.dot(&b1);
    let xx = xi.norm_squared();
    let disc = xb * xb + d2 * (delta_min - xx);
    if disc <= 0.0 {
        return 0.0;
    }
    let c = pred.c_hat[0];
    let sd = pred.s2[0].max(0.0).sqrt();
    if sd == 0.0 {
        return improvement(delta_min, xx - 2.0 * xb * c + d2 * c * c);
    }
    let root = disc.sqrt();
    let (w1, w2) = ((xb - root) / d2, (xb + root) / d2);
    let (l1, l2) = ((w1 - c) / sd, (w2 - c) / sd);
    let lead = delta_min - xx + 2.0 * xb * c - d2 * c * c - d2 * sd * sd;
    let value = lead * normal_mass(l1, l2)
        + 2.0 * (d2 * c * sd - xb * sd) * (norm_pdf(l2) - norm_pdf(l1))
        + d2 * sd * sd * (l2 * norm_pdf(l2) - l1 * norm_pdf(l1));
    value.max(0.0)
}

/// Monte-Carlo EI: sample coefficients and residual noise from the
/// predictive law; returns the mean improvement and its standard error.
pub fn mc_ei(model: &SvdGpModel, x: &[f64], xi: &DVector<f64>, delta_min: f64, n_samples: usize, seed: u64) -> (f64, f64) {
    assert!(n_samples >= 2, "mc_ei needs at least two samples");
    let pred = model.predict(x);
    let sd: Vec<f64> = pred.s2.iter().map(|v| v.max(0.0).sqrt()).collect();
    let noise_sd = pred.noise.max(0.0).sqrt();
    let l = model.series_len();
    let mut rng = rng::stream(seed, "mc-ei", 0);
    let mut c = vec![0.0; model.p];
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for n in 1..=n_samples {
        for i in 0..model.p {
            let z: f64 = StandardNormal.sample(&mut rng);
            c[i] = pred.c_hat[i] + sd[i] * z;
        }
        let mut delta = 0.0;
        for t in 0..l {
            let mut y = 0.0;
            for (i, ci) in c.iter().enumerate() {
                y += model.b[(t, i)] * ci;
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            let r = xi[t] - y - noise_sd * e;
            delta += r * r;
        }
        let gain = improvement(delta_min, delta);
        let diff = gain - mean;
        mean += diff / n as f64;
        m2 += diff * (gain - mean);
    }
    let var = m2 / (n_samples - 1) as f64;
    (mean, (var / n_samples as f64).sqrt())
}

//! Standard normal helpers.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 - Phi(x)) / phi(x)` for `x >= 0`.
///
/// Equals `e^{x^2/2} (1 - Phi(x)) sqrt(2 pi)`; finite for every `x`, which
/// is what the saddlepoint branches need when `Q` is large.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 5.0 {
        0.5 * erfc(x * FRAC_1_SQRT_2) * (0.5 * x * x).exp() * (2.0 * PI).sqrt()
    } else {
        // Laplace continued fraction x/(x^2+1-) ... evaluated bottom-up.
        let mut tail = 0.0;
        for k in (1..=60).rev() {
            tail = k as f64 / (x + tail);
        }
        1.0 / (x + tail)
    }
}

/// `R(x)(x^4 + 3x^2) - x^3 - 2x` with `R` the Mills ratio.
///
/// This is the skewness-correction bracket of the saddlepoint EI after the
/// `e^{Q^2/2}` factor has been absorbed. Direct evaluation cancels badly
/// for large `x`, where the asymptotic series `sum_n (-1)^n 2n (2n+1)!! x^-(2n+1)`
/// is used instead.
pub fn skew_bracket(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 10.0 {
        let x2 = x * x;
        mills_ratio(x) * (x2 * x2 + 3.0 * x2) - x * x2 - 2.0 * x
    } else {
        let inv_x2 = 1.0 / (x * x);
        let mut double_fact = 1.0; // (2n+1)!!
        let mut power = 1.0 / x; // x^-(2n+1)
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for n in 1..200 {
            double_fact *= (2 * n + 1) as f64;
            power *= inv_x2;
            let term = 2.0 * n as f64 * double_fact * power;
            if term > prev {
                break;
            }
            sum += if n % 2 == 1 { -term } else { term };
            prev = term;
            if term < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    }
}

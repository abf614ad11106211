//! Scalar special functions shared by tape primitives.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Error function to near machine precision.
///
/// Power series for small arguments, Lentz continued fraction for the
/// complement elsewhere.
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 2.0 {
        erf_series(x)
    } else if ax < 6.5 {
        let c = erfc_cf(ax);
        if x > 0.0 {
            1.0 - c
        } else {
            c - 1.0
        }
    } else {
        x.signum()
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x2 / n as f64;
        let contrib = term / (2 * n + 1) as f64;
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum * 2.0 / PI.sqrt()
}

/// erfc(x) for x >= 2 via the continued fraction
/// erfc(x) = exp(-x^2)/(x sqrt(pi)) * 1/(1+ u/(1+ 2u/(1+ 3u/(1+ ...)))), u = 1/(2x^2).
fn erfc_cf(x: f64) -> f64 {
    let u = 0.5 / (x * x);
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = tiny;
    let mut d = 0.0;
    for n in 0..200u32 {
        let a = if n == 0 { 1.0 } else { n as f64 * u };
        let b = 1.0;
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / (x * PI.sqrt()) * f
}

/// Standard normal CDF.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2))
}

/// Standard normal PDF.
pub fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Exact GeLU: x * Phi(x), Gaussian CDF form.
pub fn gelu(x: f64) -> f64 {
    x * gaussian_cdf(x)
}

/// d/dx gelu = Phi(x) + x * phi(x).
pub fn gelu_grad(x: f64) -> f64 {
    gaussian_cdf(x) + x * gaussian_pdf(x)
}

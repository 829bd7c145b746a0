//! Standard-normal helpers.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile, refined by one Newton step.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut z = -SQRT_2 * erfc_inv(2.0 * p);
    // polish in the tail the CDF is evaluated on
    let dens = norm_pdf(z);
    if dens > 1e-300 {
        let err = if z < 0.0 {
            norm_cdf(z) - p
        } else {
            (1.0 - p) - norm_sf(z)
        };
        z -= err / dens;
    }
    z
}

/// Quantile from an upper-tail probability `s = 1 - p`, accurate for tiny `s`.
pub fn norm_isf(s: f64) -> f64 {
    -norm_quantile(s)
}

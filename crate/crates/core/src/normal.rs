//! Standard normal helpers.

use statrs::function::erf;
use std::f64::consts::FRAC_1_SQRT_2;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Quantile function; `p` must lie in (0, 1).
pub fn inv_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    // one Halley step against the erfc-based cdf
    let e = if x < 0.0 { cdf(x) - p } else { (1.0 - p) - cdf(-x) };
    let u = e / pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

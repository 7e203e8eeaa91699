//! Standard normal distribution helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, `0.5 * erfc(-x / sqrt(2))`.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Log-density of a multivariate normal with precision matrix given by its
/// Cholesky-solved quadratic form: `-0.5 * q - 0.5 * log_det - d/2 * log(2 pi)`.
#[inline]
pub fn mvn_log_density(quad_form: f64, log_det: f64, dim: usize) -> f64 {
    -0.5 * quad_form - 0.5 * log_det - 0.5 * dim as f64 * (2.0 * PI).ln()
}

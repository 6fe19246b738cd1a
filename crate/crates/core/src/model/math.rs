use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

/// Standard normal density.
pub fn gaussian_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function, `0.5 * erfc(-z / sqrt(2))`.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `log(sum(exp(v)))` with the maximum factored out. `None` for empty input.
pub fn log_sum_exp(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return None;
    }
    if max == f64::NEG_INFINITY || max.is_nan() || max == f64::INFINITY {
        return Some(max);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Some(max + sum.ln())
}

//! Truncation-error diagnostics for the three chaos cutoffs: noise
//! coordinates `I`, basis functions `J`, and polynomial order `K`.

use crate::error::{Error, Result};

/// Terms summed when reporting the basis truncation tail.
const TAIL_J_TERMS: usize = 10_000;

/// Eigenvalue tail `sum_{i > I} lambda_i` of a finite noise spectrum.
pub fn eigenvalue_tail(eigenvalues: &[f64], i_count: usize) -> f64 {
    // `+ 0.0` normalizes the negative zero of an empty tail.
    eigenvalues.iter().skip(i_count).sum::<f64>() + 0.0
}

/// Basis truncation tail: the partial sum of the squared per-mode bounds
/// `(sqrt(2T) / (pi (j-1)))^2` for `j > J`, together with the closed-form
/// majorant `4T / (pi^2 J)` of the full series.
pub fn basis_tail(horizon: f64, j_count: usize) -> Result<(f64, f64)> {
    if !(horizon > 0.0) || j_count == 0 {
        return Err(Error::InvalidParameter { what: "basis tail arguments" });
    }
    let c = 2.0 * horizon / (core::f64::consts::PI * core::f64::consts::PI);
    let mut partial = 0.0;
    for j in (j_count + 1)..=(j_count + TAIL_J_TERMS) {
        let k = (j - 1) as f64;
        partial += c / (k * k);
    }
    let bound = 4.0 * horizon / (core::f64::consts::PI * core::f64::consts::PI * j_count as f64);
    Ok((partial, bound))
}

/// Order-truncation term
/// `(C_S C_FB sqrt(T) e^{C_S C_FB T})^{K+1} / sqrt((K+1)!)`,
/// evaluated in log space so large `K` cannot overflow.
pub fn order_term(c_s: f64, c_fb: f64, horizon: f64, order: u32) -> Result<f64> {
    if !(c_s >= 0.0 && c_fb >= 0.0 && horizon > 0.0) {
        return Err(Error::InvalidParameter { what: "order term constants" });
    }
    let c = c_s * c_fb;
    if c == 0.0 {
        return Ok(0.0);
    }
    let k1 = (order + 1) as f64;
    let log_term = k1 * (libm::log(c) + 0.5 * libm::log(horizon) + c * horizon)
        - 0.5 * libm::lgamma(k1 + 1.0);
    Ok(libm::exp(log_term))
}

/// Combined truncation report for one cutoff choice.
#[derive(Debug, Clone, Copy)]
pub struct RateReport {
    pub i_count: usize,
    pub j_count: usize,
    pub order: u32,
    pub eigenvalue_tail: f64,
    pub basis_tail_partial: f64,
    pub basis_tail_bound: f64,
    pub order_term: f64,
}

/// Evaluates all three truncation diagnostics.
pub fn rate_report(
    eigenvalues: &[f64],
    horizon: f64,
    i_count: usize,
    j_count: usize,
    order: u32,
    c_s: f64,
    c_fb: f64,
) -> Result<RateReport> {
    let (basis_tail_partial, basis_tail_bound) = basis_tail(horizon, j_count)?;
    Ok(RateReport {
        i_count,
        j_count,
        order,
        eigenvalue_tail: eigenvalue_tail(eigenvalues, i_count),
        basis_tail_partial,
        basis_tail_bound,
        order_term: order_term(c_s, c_fb, horizon, order)?,
    })
}

//! Fourier cosine basis of `L^2([0,T])`.
//!
//! `g_1(t) = sqrt(1/T)` and `g_j(t) = sqrt(2/T) cos((j-1) pi t / T)` for
//! `j >= 2`. The antiderivatives `int_0^t g_j(s) ds` reconstruct Brownian
//! paths from the panel coefficients, and the `L^1` norms feed the
//! truncation-error diagnostics.

use crate::error::{Error, Result};
use core::f64::consts::PI;

/// Orthonormal cosine basis on `[0, T]` truncated at `J` functions.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBasis {
    horizon: f64,
    count: usize,
}

impl TimeBasis {
    pub fn new(horizon: f64, count: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter { what: "basis horizon must be positive" });
        }
        if count == 0 {
            return Err(Error::InvalidParameter { what: "basis count must be positive" });
        }
        Ok(TimeBasis { horizon, count })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check_args(&self, j: usize, t: f64) -> Result<()> {
        if j == 0 || j > self.count {
            return Err(Error::IndexOutOfRange { what: "basis function", index: j, limit: self.count });
        }
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfDomain { what: "basis time argument", value: t });
        }
        Ok(())
    }

    /// `g_j(t)`.
    pub fn eval(&self, j: usize, t: f64) -> Result<f64> {
        self.check_args(j, t)?;
        let big_t = self.horizon;
        if j == 1 {
            Ok(libm::sqrt(1.0 / big_t))
        } else {
            let freq = (j - 1) as f64 * PI / big_t;
            Ok(libm::sqrt(2.0 / big_t) * libm::cos(freq * t))
        }
    }

    /// Antiderivative `int_0^t g_j(s) ds` in closed form.
    pub fn integral(&self, j: usize, t: f64) -> Result<f64> {
        self.check_args(j, t)?;
        let big_t = self.horizon;
        if j == 1 {
            Ok(t / libm::sqrt(big_t))
        } else {
            let freq = (j - 1) as f64 * PI / big_t;
            Ok(libm::sqrt(2.0 / big_t) / freq * libm::sin(freq * t))
        }
    }

    /// `int_0^T |g_j(s)| ds`.
    ///
    /// For `j >= 2` the integrand covers `j-1` half-periods of `|cos|`, each
    /// contributing `2/freq`, so the norm is `2 sqrt(2T) / pi` independent of `j`.
    /// `j` may exceed the truncation count; only `j >= 1` is required.
    pub fn l1_norm(&self, j: usize) -> Result<f64> {
        if j == 0 {
            return Err(Error::IndexOutOfRange { what: "basis function", index: j, limit: usize::MAX });
        }
        let big_t = self.horizon;
        if j == 1 {
            Ok(libm::sqrt(big_t))
        } else {
            Ok(2.0 * libm::sqrt(2.0 * big_t) / PI)
        }
    }
}

//! The shipped SPDE problems: stochastic heat, HJM/Vasicek forward rates, and
//! the Zakai filtering equation. Each problem exposes its initial condition,
//! generator action, affine drift/diffusion coefficients for the residual
//! loss, and a reference solution for evaluation.

use crate::basis::TimeBasis;
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::wick::{brownian_path, GaussianPanel};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

/// Problem family tag with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    /// `dX = Laplacian(X) dt + b0 dW` with Gaussian-bump initial condition.
    Heat { sigma: f64 },
    /// HJM forward-rate dynamics driven by a Vasicek short rate.
    Hjm { r0: f64, mu: f64, kappa: f64, sigma: f64 },
    /// Unnormalized filtering density; `n` observation coordinates equal the
    /// signal dimension.
    Zakai { n: usize },
}

/// A semilinear SPDE instance: spatial setting, horizon, noise eigenvalues,
/// and the coefficient actions used by both losses.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdeProblem {
    pub kind: ProblemKind,
    pub space_dim: usize,
    pub out_dim: usize,
    pub horizon: f64,
    pub eigenvalues: Vec<f64>,
    /// Sobolev order of the empirical norm: 0 or 1.
    pub sobolev_order: usize,
}

/// Per-scenario state the coefficient actions may depend on (the Zakai signal).
#[derive(Debug, Clone, Default)]
pub struct ScenarioState<'a> {
    /// Signal value `Y_t` at the relevant grid time.
    pub signal: Option<&'a [f64]>,
}

/// Generator action written as linear-functional coefficients on
/// (value, gradient, Hessian quadratic forms).
#[derive(Debug, Clone)]
pub struct GeneratorAction {
    pub value: f64,
    pub grad: Vec<f64>,
    pub quad: Vec<(f64, Vec<f64>)>,
}

impl SpdeProblem {
    /// Stochastic heat equation in dimension `m` with initial bump width `sigma`.
    pub fn heat(space_dim: usize, sigma: f64, horizon: f64) -> Result<Self> {
        if space_dim == 0 || !(sigma > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidParameter { what: "heat problem parameters" });
        }
        Ok(SpdeProblem {
            kind: ProblemKind::Heat { sigma },
            space_dim,
            out_dim: 1,
            horizon,
            eigenvalues: vec![1.0],
            sobolev_order: 0,
        })
    }

    /// HJM equation under the Vasicek short-rate model.
    pub fn hjm(r0: f64, mu: f64, kappa: f64, sigma: f64, horizon: f64) -> Result<Self> {
        if kappa == 0.0 {
            return Err(Error::InvalidParameter { what: "hjm mean-reversion kappa must be nonzero" });
        }
        if !(sigma > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidParameter { what: "hjm problem parameters" });
        }
        Ok(SpdeProblem {
            kind: ProblemKind::Hjm { r0, mu, kappa, sigma },
            space_dim: 1,
            out_dim: 1,
            horizon,
            eigenvalues: vec![1.0],
            sobolev_order: 1,
        })
    }

    /// Zakai equation with signal dimension `m` (and as many observation
    /// coordinates). Panel rows `1..=n` carry the observation noise, rows
    /// `n+1..=n+m` the signal noise.
    pub fn zakai(space_dim: usize, horizon: f64) -> Result<Self> {
        if space_dim == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidParameter { what: "zakai problem parameters" });
        }
        Ok(SpdeProblem {
            kind: ProblemKind::Zakai { n: space_dim },
            space_dim,
            out_dim: 1,
            horizon,
            eigenvalues: vec![1.0; 2 * space_dim],
            sobolev_order: 0,
        })
    }

    /// Number of driving Brownian coordinates the Wick panel must carry.
    pub fn noise_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Initial condition `chi_0(u)`.
    pub fn chi0(&self, u: &[f64]) -> Result<f64> {
        self.check_u(u)?;
        Ok(match self.kind {
            ProblemKind::Heat { sigma } => 10.0 * libm::exp(-sq_norm(u) / (2.0 * sigma * sigma)),
            ProblemKind::Hjm { r0, mu, kappa, sigma } => hjm_forward(r0, mu, kappa, sigma, u[0]),
            ProblemKind::Zakai { .. } => gaussian_density(u),
        })
    }

    /// `d chi_0 / d u_l (u)`.
    pub fn chi0_deriv(&self, u: &[f64], l: usize) -> Result<f64> {
        self.check_u(u)?;
        Ok(match self.kind {
            ProblemKind::Heat { sigma } => {
                -u[l] / (sigma * sigma) * 10.0 * libm::exp(-sq_norm(u) / (2.0 * sigma * sigma))
            }
            ProblemKind::Hjm { r0, mu, kappa, sigma } => hjm_forward_du(r0, mu, kappa, sigma, u[0]),
            ProblemKind::Zakai { .. } => -u[l] * gaussian_density(u),
        })
    }

    /// Norm weight function `w(u)`.
    pub fn weight(&self, u: &[f64]) -> Result<f64> {
        self.check_u(u)?;
        Ok(match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Zakai { .. } => gaussian_density(u),
            ProblemKind::Hjm { .. } => libm::exp(0.1 * u[0]),
        })
    }

    /// Derivative orders entering the empirical Sobolev norm: `None` is the
    /// plain value, `Some(l)` the first derivative in coordinate `l`.
    pub fn derivative_orders(&self) -> Vec<Option<usize>> {
        let mut orders = vec![None];
        if self.sobolev_order >= 1 {
            orders.extend((0..self.space_dim).map(Some));
        }
        orders
    }

    /// Sobolev weight `c_{beta, m3}` of derivative slot `beta_idx` at spatial
    /// sample `m3`. The HJM norm takes the value at the pinned first point
    /// (the origin) and derivatives at the remaining points.
    pub fn loss_weight(&self, beta_idx: usize, m3: usize) -> f64 {
        match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Zakai { .. } => 1.0,
            ProblemKind::Hjm { .. } => {
                let value_slot = beta_idx == 0;
                if value_slot == (m3 == 0) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Spatial sample points, `count x m` row-major, derived from `seed`.
    /// Heat/Zakai draw standard normals; HJM pins `u_1 = 0` and draws the rest
    /// from the exponentially tilted density on `[0, 3]`.
    pub fn sample_points(&self, seed: u64, count: usize) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(Error::InvalidParameter { what: "spatial sample count must be positive" });
        }
        let m = self.space_dim;
        let mut pts = Vec::with_capacity(count * m);
        match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Zakai { .. } => {
                for p in 0..count {
                    for l in 0..m {
                        pts.push(rng::normal(seed, stream::SPATIAL, rng::pack2(p, l)));
                    }
                }
            }
            ProblemKind::Hjm { .. } => {
                pts.push(0.0);
                let scale = libm::exp(0.3) - 1.0;
                for p in 1..count {
                    let v = rng::uniform(seed, stream::SPATIAL, rng::pack2(p, 0));
                    pts.push(10.0 * libm::log(1.0 + v * scale));
                }
            }
        }
        Ok(pts)
    }

    /// Generator (`Delta`, `d/du`, or the filtering adjoint) as coefficients
    /// of a linear functional at `u`.
    pub fn generator_action(&self, u: &[f64]) -> Result<GeneratorAction> {
        self.check_u(u)?;
        let m = self.space_dim;
        Ok(match self.kind {
            ProblemKind::Heat { .. } => {
                let quad = (0..m)
                    .map(|l| {
                        let mut v = vec![0.0; m];
                        v[l] = 1.0;
                        (1.0, v)
                    })
                    .collect();
                GeneratorAction { value: 0.0, grad: vec![0.0; m], quad }
            }
            ProblemKind::Hjm { .. } => {
                GeneratorAction { value: 0.0, grad: vec![1.0], quad: Vec::new() }
            }
            ProblemKind::Zakai { .. } => {
                // sigma sigma^T is the all-ones matrix, so the second-order
                // part collapses to half the quadratic form along (1,...,1).
                // First-order and zero-order parts come from expanding
                // -sum_l d/du_l (mu_l y).
                let mu = zakai_drift(u);
                GeneratorAction {
                    value: -zakai_drift_div(u),
                    grad: mu.iter().map(|x| -x).collect(),
                    quad: vec![(0.5, vec![1.0; m])],
                }
            }
        })
    }

    /// Additive drift part `f_0(t)(u)`.
    pub fn drift_f0(&self, _t: f64, u: &[f64]) -> Result<f64> {
        self.check_u(u)?;
        Ok(match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Zakai { .. } => 0.0,
            ProblemKind::Hjm { mu: _, kappa, sigma, .. } => {
                let e = libm::exp(-kappa * u[0]);
                sigma * sigma / kappa * e * (1.0 - e)
            }
        })
    }

    /// `d f_0 / d u (t)(u)`.
    pub fn drift_f0_deriv(&self, _t: f64, u: &[f64], l: usize) -> Result<f64> {
        self.check_u(u)?;
        let _ = l;
        Ok(match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Zakai { .. } => 0.0,
            ProblemKind::Hjm { kappa, sigma, .. } => {
                let e = libm::exp(-kappa * u[0]);
                sigma * sigma / kappa * (-kappa * e * (1.0 - e) + e * kappa * e)
            }
        })
    }

    /// Multiplicative drift part: the scalar `q(t, omega, u)` with
    /// `F_1(x)(u) = q * x(u)`. Nonzero only for the filtering problem.
    pub fn drift_f1(&self, _t: f64, u: &[f64], state: &ScenarioState<'_>) -> Result<f64> {
        self.check_u(u)?;
        Ok(match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Hjm { .. } => 0.0,
            ProblemKind::Zakai { .. } => {
                let y = state.signal.ok_or(Error::InvalidParameter {
                    what: "zakai drift requires the scenario signal state",
                })?;
                dot(&zakai_observation(u), &zakai_observation(y))
            }
        })
    }

    /// Additive diffusion applied to a noise increment: `(b_0 dw)(u)`.
    /// `dw` carries all `noise_dim` coordinates.
    pub fn diffusion_b0(&self, u: &[f64], dw: &[f64]) -> Result<f64> {
        self.check_u(u)?;
        self.check_dw(dw)?;
        Ok(match self.kind {
            ProblemKind::Heat { .. } => dw[0],
            ProblemKind::Hjm { kappa, sigma, .. } => sigma * libm::exp(-kappa * u[0]) * dw[0],
            ProblemKind::Zakai { .. } => 0.0,
        })
    }

    /// `d/du_l (b_0 dw)(u)`.
    pub fn diffusion_b0_deriv(&self, u: &[f64], dw: &[f64], l: usize) -> Result<f64> {
        self.check_u(u)?;
        self.check_dw(dw)?;
        let _ = l;
        Ok(match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Zakai { .. } => 0.0,
            ProblemKind::Hjm { kappa, sigma, .. } => {
                -kappa * sigma * libm::exp(-kappa * u[0]) * dw[0]
            }
        })
    }

    /// Multiplicative diffusion applied to a noise increment: the scalar
    /// `q(u, dw)` with `(B_1(x) dw)(u) = q * x(u)`.
    pub fn diffusion_b1(&self, u: &[f64], dw: &[f64]) -> Result<f64> {
        self.check_u(u)?;
        self.check_dw(dw)?;
        Ok(match self.kind {
            ProblemKind::Heat { .. } | ProblemKind::Hjm { .. } => 0.0,
            ProblemKind::Zakai { n } => dot(&zakai_observation(u), &dw[..n]),
        })
    }

    /// Whether the residual coefficients depend on the scenario (through the
    /// signal path), which rules out the factorized normal-equation assembly.
    pub fn state_dependent_coefficients(&self) -> bool {
        matches!(self.kind, ProblemKind::Zakai { .. })
    }

    fn check_u(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.space_dim {
            return Err(Error::DimensionMismatch {
                what: "spatial point",
                expected: self.space_dim,
                got: u.len(),
            });
        }
        Ok(())
    }

    fn check_dw(&self, dw: &[f64]) -> Result<()> {
        if dw.len() != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                what: "noise increment",
                expected: self.noise_dim(),
                got: dw.len(),
            });
        }
        Ok(())
    }
}

fn sq_norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_density(u: &[f64]) -> f64 {
    libm::pow(2.0 * PI, -(u.len() as f64) / 2.0) * libm::exp(-sq_norm(u) / 2.0)
}

/// Signal drift `mu(y) = 0.25 y / (1 + |y|^2)`.
fn zakai_drift(y: &[f64]) -> Vec<f64> {
    let s = 1.0 + sq_norm(y);
    y.iter().map(|x| 0.25 * x / s).collect()
}

/// Divergence of the signal drift.
fn zakai_drift_div(y: &[f64]) -> f64 {
    let m = y.len() as f64;
    let s2 = sq_norm(y);
    let s = 1.0 + s2;
    0.25 * (m * s - 2.0 * s2) / (s * s)
}

/// Observation function `kappa(y) = 0.5 y`.
fn zakai_observation(y: &[f64]) -> Vec<f64> {
    y.iter().map(|x| 0.5 * x).collect()
}

/// Heat-semigroup part of the mild solution: the Gaussian-Gaussian
/// convolution `(S_t chi_0)(u)` in closed form.
pub fn heat_semigroup_chi0(space_dim: usize, sigma: f64, t: f64, u: &[f64]) -> f64 {
    let s2 = sigma * sigma + 2.0 * t;
    10.0 * libm::pow(sigma * sigma / s2, space_dim as f64 / 2.0) * libm::exp(-sq_norm(u) / (2.0 * s2))
}

/// Mild solution of the heat problem under the J-truncated noise:
/// `S_t chi_0 (u) + W^{(I,J)}_t(omega_m)`.
pub fn heat_reference(
    problem: &SpdeProblem,
    panel: &GaussianPanel,
    basis: &TimeBasis,
    m1: usize,
    t: f64,
    u: &[f64],
) -> Result<f64> {
    let ProblemKind::Heat { sigma } = problem.kind else {
        return Err(Error::InvalidParameter { what: "heat reference on non-heat problem" });
    };
    problem.check_u(u)?;
    let w = brownian_path(panel, basis, &problem.eigenvalues, m1, t)?;
    Ok(heat_semigroup_chi0(problem.space_dim, sigma, t, u) + w[0])
}

/// Convolution integral `int_0^t e^{-kappa (t-s)} g_j(s) ds` in closed form.
fn ou_basis_integral(basis: &TimeBasis, kappa: f64, j: usize, t: f64) -> Result<f64> {
    let big_t = basis.horizon();
    if j == 0 || j > basis.count() {
        return Err(Error::IndexOutOfRange { what: "basis function", index: j, limit: basis.count() });
    }
    if j == 1 {
        Ok(libm::sqrt(1.0 / big_t) * (1.0 - libm::exp(-kappa * t)) / kappa)
    } else {
        let w = (j - 1) as f64 * PI / big_t;
        let num = kappa * libm::cos(w * t) + w * libm::sin(w * t) - kappa * libm::exp(-kappa * t);
        Ok(libm::sqrt(2.0 / big_t) * num / (kappa * kappa + w * w))
    }
}

/// Vasicek short rate driven by the J-truncated Brownian path of scenario
/// `m1`: the Ornstein-Uhlenbeck convolution is evaluated in closed form
/// against the smooth reconstructed path, so the rate is exact given the
/// truncated noise.
pub fn vasicek_rate(
    problem: &SpdeProblem,
    panel: &GaussianPanel,
    basis: &TimeBasis,
    m1: usize,
    t: f64,
) -> Result<f64> {
    let ProblemKind::Hjm { r0, mu, kappa, sigma } = problem.kind else {
        return Err(Error::InvalidParameter { what: "vasicek rate on non-hjm problem" });
    };
    let decay = libm::exp(-kappa * t);
    let mut stoch = 0.0;
    for j in 1..=panel.j_count() {
        stoch += panel.xi(m1, 1, j)? * ou_basis_integral(basis, kappa, j, t)?;
    }
    Ok(r0 * decay + mu / kappa * (1.0 - decay) + sigma * stoch)
}

/// Forward-curve closed form `X_t(u)` given the short rate `r_t`.
pub fn hjm_forward(r_t: f64, mu: f64, kappa: f64, sigma: f64, u: f64) -> f64 {
    let e = libm::exp(-kappa * u);
    r_t * e + mu / kappa * (1.0 - e) - sigma * sigma / (2.0 * kappa * kappa) * (1.0 - e) * (1.0 - e)
}

/// `d X_t / d u` of the forward-curve closed form.
pub fn hjm_forward_du(r_t: f64, mu: f64, kappa: f64, sigma: f64, u: f64) -> f64 {
    let e = libm::exp(-kappa * u);
    e * (-kappa * r_t + mu - sigma * sigma / kappa * (1.0 - e))
}

/// Signal path `Y` of one Zakai scenario on the given time grid, Euler-
/// discretized against the scenario's reconstructed signal-noise increments.
/// Returns `times.len()` states of dimension `m`.
pub fn zakai_signal_path(
    problem: &SpdeProblem,
    panel: &GaussianPanel,
    basis: &TimeBasis,
    m1: usize,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let ProblemKind::Zakai { n } = problem.kind else {
        return Err(Error::InvalidParameter { what: "signal path on non-zakai problem" });
    };
    let m = problem.space_dim;
    let mut y = Vec::with_capacity(m);
    for l in 0..m {
        y.push(rng::normal(panel.seed(), stream::SIGNAL_INIT, rng::pack2(m1, l)));
    }
    let mut path = Vec::with_capacity(times.len());
    path.push(y.clone());
    let mut w_prev = brownian_path(panel, basis, &problem.eigenvalues, m1, times[0])?;
    for step in 1..times.len() {
        let w_cur = brownian_path(panel, basis, &problem.eigenvalues, m1, times[step])?;
        let dt = times[step] - times[step - 1];
        let drift = zakai_drift(&y);
        // sigma(y) = m^{-1/2} * ones, so sigma dW has identical components
        // m^{-1/2} * sum_k dW~_k.
        let dw_sum: f64 = (n..n + m).map(|i| w_cur[i] - w_prev[i]).sum();
        let shared = dw_sum / libm::sqrt(m as f64);
        for l in 0..m {
            y[l] += drift[l] * dt + shared;
        }
        path.push(y.clone());
        w_prev = w_cur;
    }
    Ok(path)
}

/// Configuration of the Zakai particle reference.
#[derive(Debug, Clone, Copy)]
pub struct ZakaiRefConfig {
    pub particles: usize,
    /// Kernel bandwidth; `None` selects a Silverman-style default from the
    /// particle spread.
    pub bandwidth: Option<f64>,
    /// Relative standard-error level above which an evaluation is flagged.
    pub se_threshold: f64,
}

impl Default for ZakaiRefConfig {
    fn default() -> Self {
        ZakaiRefConfig { particles: 10_000, bandwidth: None, se_threshold: 0.1 }
    }
}

/// One Zakai reference density estimate with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy)]
pub struct ZakaiEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Set when the standard error exceeds the configured fraction of the value.
    pub flagged: bool,
}

/// Particle cloud implementing the unnormalized filtering density of one
/// scenario: independent signal copies weighted by the likelihood of the
/// scenario's observation path, smoothed by a Gaussian kernel.
pub struct ZakaiParticleCloud {
    space_dim: usize,
    times: Vec<f64>,
    /// `particles x times x m` positions.
    positions: Vec<f64>,
    /// `particles x times` likelihood weights.
    weights: Vec<f64>,
    bandwidth: Vec<f64>,
    particles: usize,
    se_threshold: f64,
}

impl ZakaiParticleCloud {
    pub fn simulate(
        problem: &SpdeProblem,
        panel: &GaussianPanel,
        basis: &TimeBasis,
        m1: usize,
        times: &[f64],
        cfg: &ZakaiRefConfig,
    ) -> Result<Self> {
        let ProblemKind::Zakai { n } = problem.kind else {
            return Err(Error::InvalidParameter { what: "particle cloud on non-zakai problem" });
        };
        if times.is_empty() || cfg.particles == 0 {
            return Err(Error::InvalidParameter { what: "particle cloud needs times and particles" });
        }
        let m = problem.space_dim;
        let p_count = cfg.particles;
        let steps = times.len();

        // Observation increments of this scenario: dZ = kappa(Y) dt + dW.
        let signal = zakai_signal_path(problem, panel, basis, m1, times)?;
        let mut dz = Vec::with_capacity((steps - 1) * n);
        let mut w_prev = brownian_path(panel, basis, &problem.eigenvalues, m1, times[0])?;
        for step in 1..steps {
            let w_cur = brownian_path(panel, basis, &problem.eigenvalues, m1, times[step])?;
            let dt = times[step] - times[step - 1];
            let obs = zakai_observation(&signal[step - 1]);
            for k in 0..n {
                dz.push(obs[k] * dt + (w_cur[k] - w_prev[k]));
            }
            w_prev = w_cur;
        }

        let seed = panel.seed();
        let mut positions = vec![0.0; p_count * steps * m];
        let mut weights = vec![0.0; p_count * steps];
        for p in 0..p_count {
            let mut y: Vec<f64> = (0..m)
                .map(|l| rng::normal(seed, stream::PARTICLES, rng::pack4(m1, p, 0, l)))
                .collect();
            positions[(p * steps) * m..(p * steps) * m + m].copy_from_slice(&y);
            let mut log_w = 0.0;
            weights[p * steps] = 1.0;
            for step in 1..steps {
                let dt = times[step] - times[step - 1];
                let obs = zakai_observation(&y);
                let dz_l = &dz[(step - 1) * n..step * n];
                log_w += dot(&obs, dz_l) - 0.5 * sq_norm(&obs) * dt;
                let drift = zakai_drift(&y);
                let shared: f64 = (0..m)
                    .map(|l| rng::normal(seed, stream::PARTICLES, rng::pack4(m1, p, step, l)))
                    .sum::<f64>()
                    * libm::sqrt(dt)
                    / libm::sqrt(m as f64);
                for l in 0..m {
                    y[l] += drift[l] * dt + shared;
                }
                let base = (p * steps + step) * m;
                positions[base..base + m].copy_from_slice(&y);
                weights[p * steps + step] = libm::exp(log_w);
            }
        }

        // Silverman-style bandwidth per time from the particle spread.
        let mut bandwidth = Vec::with_capacity(steps);
        for step in 0..steps {
            if let Some(h) = cfg.bandwidth {
                bandwidth.push(h);
            } else {
                let mut mean = vec![0.0; m];
                for p in 0..p_count {
                    let base = (p * steps + step) * m;
                    for l in 0..m {
                        mean[l] += positions[base + l];
                    }
                }
                for v in &mut mean {
                    *v /= p_count as f64;
                }
                let mut var = 0.0;
                for p in 0..p_count {
                    let base = (p * steps + step) * m;
                    for l in 0..m {
                        let d = positions[base + l] - mean[l];
                        var += d * d;
                    }
                }
                let sd = libm::sqrt(var / ((p_count * m) as f64));
                bandwidth.push(1.06 * sd * libm::pow(p_count as f64, -1.0 / (m as f64 + 4.0)));
            }
        }

        Ok(ZakaiParticleCloud {
            space_dim: m,
            times: times.to_vec(),
            positions,
            weights,
            bandwidth,
            particles: p_count,
            se_threshold: cfg.se_threshold,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Unnormalized density estimate at grid time index `step` and point `u`.
    pub fn density(&self, step: usize, u: &[f64]) -> Result<ZakaiEstimate> {
        if step >= self.times.len() {
            return Err(Error::IndexOutOfRange { what: "time index", index: step, limit: self.times.len() });
        }
        if u.len() != self.space_dim {
            return Err(Error::DimensionMismatch {
                what: "spatial point",
                expected: self.space_dim,
                got: u.len(),
            });
        }
        let m = self.space_dim;
        let steps = self.times.len();
        let h = self.bandwidth[step];
        let norm = libm::pow(2.0 * PI * h * h, -(m as f64) / 2.0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for p in 0..self.particles {
            let base = (p * steps + step) * m;
            let mut q = 0.0;
            for l in 0..m {
                let d = u[l] - self.positions[base + l];
                q += d * d;
            }
            let v = self.weights[p * steps + step] * norm * libm::exp(-q / (2.0 * h * h));
            sum += v;
            sum_sq += v * v;
        }
        let p = self.particles as f64;
        let mean = sum / p;
        let var = (sum_sq / p - mean * mean).max(0.0) / (p - 1.0).max(1.0);
        let std_error = libm::sqrt(var);
        Ok(ZakaiEstimate {
            value: mean,
            std_error,
            flagged: std_error > self.se_threshold * libm::fabs(mean),
        })
    }

    /// Mean likelihood weight at grid time index `step`; the kernel estimate
    /// integrates to this value in exact arithmetic (mass consistency).
    pub fn mean_weight(&self, step: usize) -> f64 {
        let steps = self.times.len();
        let mut acc = 0.0;
        for p in 0..self.particles {
            acc += self.weights[p * steps + step];
        }
        acc / self.particles as f64
    }
}

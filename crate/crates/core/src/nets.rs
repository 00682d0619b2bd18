//! Single-hidden-layer propagator networks with tanh activation.
//!
//! One parameter layout serves both the fully trained and the random-feature
//! variant: a frozen flag protects the inner parameters of the latter, so only
//! the linear readout changes during training. All derivatives (in space, and
//! with respect to every parameter) are closed-form.

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

/// Sampling law for the frozen inner parameters of a random-feature network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleLaw {
    /// i.i.d. uniform on `[-radius, radius]` per coordinate.
    UniformBox { radius: f64 },
    /// Multivariate Student-t with one degree of freedom for the space
    /// weights, scalar t1 for the time weight and bias.
    StudentT,
}

/// `phi(t, u) = sum_n y_n tanh(a0_n t + a1_n' u - b_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    space_dim: usize,
    out_dim: usize,
    neurons: usize,
    /// Time weights, length `N`.
    a0: Vec<f64>,
    /// Space weights, `N x m` row-major.
    a1: Vec<f64>,
    /// Biases, length `N`.
    b: Vec<f64>,
    /// Readouts, `N x d` row-major.
    y: Vec<f64>,
    frozen: bool,
    law: Option<(SampleLaw, u64)>,
}

/// Activation values and derivatives per neuron at one input point.
pub struct Activations {
    /// `rho(z_n)`.
    pub val: Vec<f64>,
    /// `rho'(z_n) = 1 - tanh^2`.
    pub d1: Vec<f64>,
    /// `rho''(z_n) = -2 tanh (1 - tanh^2)`.
    pub d2: Vec<f64>,
    /// `rho'''(z_n)`.
    pub d3: Vec<f64>,
}

/// A linear functional of a network as a function of space: a combination of
/// the value, first derivatives, and Hessian quadratic forms at one `(t, u)`.
///
/// Both training losses reduce to sums of such functionals, which keeps the
/// parameter gradient of either loss a single code path.
#[derive(Debug, Clone)]
pub struct LinFunc {
    pub t: f64,
    pub u: Vec<f64>,
    /// Coefficient of the plain value.
    pub value: f64,
    /// Coefficients of the first partial derivatives, length `m` (empty = none).
    pub grad: Vec<f64>,
    /// Quadratic forms `coef * v' Hess(phi) v` on the space Hessian.
    pub quad: Vec<(f64, Vec<f64>)>,
}

impl LinFunc {
    /// Plain evaluation functional `phi(t, u)`.
    pub fn value_at(t: f64, u: Vec<f64>) -> Self {
        LinFunc { t, u, value: 1.0, grad: Vec::new(), quad: Vec::new() }
    }

    /// First-derivative functional `d phi / d u_k (t, u)`.
    pub fn deriv_at(t: f64, u: Vec<f64>, k: usize) -> Self {
        let mut grad = vec![0.0; u.len()];
        grad[k] = 1.0;
        LinFunc { t, u, value: 0.0, grad, quad: Vec::new() }
    }
}

impl Net {
    /// All-zero parameters; useful as a training start for readouts.
    pub fn zeros(neurons: usize, space_dim: usize, out_dim: usize) -> Result<Self> {
        if neurons == 0 || space_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidParameter { what: "network dimensions must be positive" });
        }
        Ok(Net {
            space_dim,
            out_dim,
            neurons,
            a0: vec![0.0; neurons],
            a1: vec![0.0; neurons * space_dim],
            b: vec![0.0; neurons],
            y: vec![0.0; neurons * out_dim],
            frozen: false,
            law: None,
        })
    }

    /// Trainable network with i.i.d. uniform `[-1, 1]` parameters, space
    /// weights scaled by `1/sqrt(m)` and readouts by `1/sqrt(N)`.
    pub fn init_deterministic(
        neurons: usize,
        space_dim: usize,
        out_dim: usize,
        seed: u64,
        tag: u64,
    ) -> Result<Self> {
        let mut net = Net::zeros(neurons, space_dim, out_dim)?;
        let unif = |k: u64| 2.0 * rng::uniform(seed, stream::NET_DET, tag.wrapping_mul(1 << 24).wrapping_add(k)) - 1.0;
        let mut k = 0;
        let m_scale = 1.0 / libm::sqrt(space_dim as f64);
        let y_scale = 1.0 / libm::sqrt(neurons as f64);
        for n in 0..neurons {
            net.a0[n] = unif(k);
            k += 1;
            for l in 0..space_dim {
                net.a1[n * space_dim + l] = unif(k) * m_scale;
                k += 1;
            }
            net.b[n] = unif(k);
            k += 1;
            for c in 0..out_dim {
                net.y[n * out_dim + c] = unif(k) * y_scale;
                k += 1;
            }
        }
        Ok(net)
    }

    /// Random-feature network: frozen inner parameters drawn i.i.d. from
    /// `law`, readouts zero-initialized.
    pub fn sample_random(
        neurons: usize,
        space_dim: usize,
        out_dim: usize,
        seed: u64,
        law: SampleLaw,
        tag: u64,
    ) -> Result<Self> {
        let mut net = Net::zeros(neurons, space_dim, out_dim)?;
        let base = tag.wrapping_mul(1 << 24);
        let mut k = 0u64;
        let draw = |k: &mut u64, law: SampleLaw| -> f64 {
            let c = base.wrapping_add(*k);
            *k += 1;
            match law {
                SampleLaw::UniformBox { radius } => radius * (2.0 * rng::uniform(seed, stream::NET_INIT, c) - 1.0),
                // Scalar t with 1 degree of freedom is Cauchy: ratio of two
                // independent standard normals.
                SampleLaw::StudentT => {
                    let z = rng::normal(seed, stream::NET_INIT, c.wrapping_mul(2));
                    let w = rng::normal(seed, stream::NET_INIT, c.wrapping_mul(2).wrapping_add(1));
                    z / libm::fabs(w).max(1e-300)
                }
            }
        };
        for n in 0..neurons {
            net.a0[n] = draw(&mut k, law);
            match law {
                SampleLaw::UniformBox { .. } => {
                    for l in 0..space_dim {
                        net.a1[n * space_dim + l] = draw(&mut k, law);
                    }
                }
                // Multivariate t_m with one degree of freedom: a Gaussian
                // vector divided by an independent half-normal scale.
                SampleLaw::StudentT => {
                    let c = base.wrapping_add(k);
                    k += 1;
                    let scale = libm::fabs(rng::normal(seed, stream::NET_INIT, c.wrapping_mul(2))).max(1e-300);
                    for l in 0..space_dim {
                        let cl = base.wrapping_add(k);
                        k += 1;
                        net.a1[n * space_dim + l] = rng::normal(seed, stream::NET_INIT, cl.wrapping_mul(2).wrapping_add(1)) / scale;
                    }
                }
            }
            net.b[n] = draw(&mut k, law);
        }
        net.frozen = true;
        net.law = Some((law, seed));
        Ok(net)
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn law(&self) -> Option<(SampleLaw, u64)> {
        self.law
    }

    pub fn inner_params(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.a0, &self.a1, &self.b)
    }

    pub fn readouts(&self) -> &[f64] {
        &self.y
    }

    pub fn set_readouts(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.y.len() {
            return Err(Error::DimensionMismatch {
                what: "readout length",
                expected: self.y.len(),
                got: y.len(),
            });
        }
        self.y.copy_from_slice(y);
        Ok(())
    }

    /// Raw parameter construction (used by deserialization).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        space_dim: usize,
        out_dim: usize,
        a0: Vec<f64>,
        a1: Vec<f64>,
        b: Vec<f64>,
        y: Vec<f64>,
        frozen: bool,
        law: Option<(SampleLaw, u64)>,
    ) -> Result<Self> {
        let neurons = a0.len();
        if neurons == 0
            || a1.len() != neurons * space_dim
            || b.len() != neurons
            || y.len() != neurons * out_dim
        {
            return Err(Error::DimensionMismatch {
                what: "network parameter arrays",
                expected: neurons,
                got: a1.len(),
            });
        }
        Ok(Net { space_dim, out_dim, neurons, a0, a1, b, y, frozen, law })
    }

    fn check_point(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.space_dim {
            return Err(Error::DimensionMismatch {
                what: "space argument",
                expected: self.space_dim,
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations `z_n = a0_n t + a1_n' u - b_n`.
    fn pre_activations(&self, t: f64, u: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.neurons);
        for n in 0..self.neurons {
            let mut s = self.a0[n] * t - self.b[n];
            let row = &self.a1[n * self.space_dim..(n + 1) * self.space_dim];
            for (w, x) in row.iter().zip(u) {
                s += w * x;
            }
            z.push(s);
        }
        z
    }

    /// tanh activation values with first to third derivatives per neuron.
    pub fn activations(&self, t: f64, u: &[f64]) -> Result<Activations> {
        self.check_point(u)?;
        let z = self.pre_activations(t, u);
        let mut act = Activations {
            val: Vec::with_capacity(self.neurons),
            d1: Vec::with_capacity(self.neurons),
            d2: Vec::with_capacity(self.neurons),
            d3: Vec::with_capacity(self.neurons),
        };
        for zn in z {
            let v = libm::tanh(zn);
            let d1 = 1.0 - v * v;
            let d2 = -2.0 * v * d1;
            let d3 = -2.0 * d1 * d1 - 2.0 * v * d2;
            act.val.push(v);
            act.d1.push(d1);
            act.d2.push(d2);
            act.d3.push(d3);
        }
        Ok(act)
    }

    /// `phi(t, u)`, length `d`.
    pub fn eval(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let act = self.activations(t, u)?;
        let mut out = vec![0.0; self.out_dim];
        for n in 0..self.neurons {
            let yn = &self.y[n * self.out_dim..(n + 1) * self.out_dim];
            for (o, yc) in out.iter_mut().zip(yn) {
                *o += yc * act.val[n];
            }
        }
        Ok(out)
    }

    /// Jacobian in space, `d x m` row-major.
    pub fn grad_u(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let act = self.activations(t, u)?;
        let mut out = vec![0.0; self.out_dim * self.space_dim];
        for n in 0..self.neurons {
            let yn = &self.y[n * self.out_dim..(n + 1) * self.out_dim];
            let row = &self.a1[n * self.space_dim..(n + 1) * self.space_dim];
            for (c, yc) in yn.iter().enumerate() {
                let f = yc * act.d1[n];
                for (l, w) in row.iter().enumerate() {
                    out[c * self.space_dim + l] += f * w;
                }
            }
        }
        Ok(out)
    }

    /// Pure second derivatives `d^2 phi_c / d u_l^2`, `d x m` row-major.
    pub fn hess_diag_u(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let act = self.activations(t, u)?;
        let mut out = vec![0.0; self.out_dim * self.space_dim];
        for n in 0..self.neurons {
            let yn = &self.y[n * self.out_dim..(n + 1) * self.out_dim];
            let row = &self.a1[n * self.space_dim..(n + 1) * self.space_dim];
            for (c, yc) in yn.iter().enumerate() {
                let f = yc * act.d2[n];
                for (l, w) in row.iter().enumerate() {
                    out[c * self.space_dim + l] += f * w * w;
                }
            }
        }
        Ok(out)
    }

    /// Linear functional value for each output coordinate, length `d`.
    pub fn linfunc_eval(&self, lf: &LinFunc) -> Result<Vec<f64>> {
        let act = self.activations(lf.t, &lf.u)?;
        let mut out = vec![0.0; self.out_dim];
        for n in 0..self.neurons {
            let row = &self.a1[n * self.space_dim..(n + 1) * self.space_dim];
            let mut factor = lf.value * act.val[n];
            if !lf.grad.is_empty() {
                let mut g = 0.0;
                for (c, w) in lf.grad.iter().zip(row) {
                    g += c * w;
                }
                factor += g * act.d1[n];
            }
            for (coef, v) in &lf.quad {
                let mut av = 0.0;
                for (vl, w) in v.iter().zip(row) {
                    av += vl * w;
                }
                factor += coef * av * av * act.d2[n];
            }
            let yn = &self.y[n * self.out_dim..(n + 1) * self.out_dim];
            for (o, yc) in out.iter_mut().zip(yn) {
                *o += yc * factor;
            }
        }
        Ok(out)
    }

    /// Per-neuron factors of a linear functional: `linfunc_eval` equals the
    /// readout matrix applied to this vector. This is the feature map of the
    /// random-feature variant, whose readout fit is linear in these factors.
    pub fn linfunc_features(&self, lf: &LinFunc) -> Result<Vec<f64>> {
        let act = self.activations(lf.t, &lf.u)?;
        let mut out = Vec::with_capacity(self.neurons);
        for n in 0..self.neurons {
            let row = &self.a1[n * self.space_dim..(n + 1) * self.space_dim];
            let mut factor = lf.value * act.val[n];
            if !lf.grad.is_empty() {
                let mut g = 0.0;
                for (c, w) in lf.grad.iter().zip(row) {
                    g += c * w;
                }
                factor += g * act.d1[n];
            }
            for (coef, v) in &lf.quad {
                let mut av = 0.0;
                for (vl, w) in v.iter().zip(row) {
                    av += vl * w;
                }
                factor += coef * av * av * act.d2[n];
            }
            out.push(factor);
        }
        Ok(out)
    }

    /// Number of scalar parameters in the flat layout `[a0 | a1 | b | y]`.
    pub fn param_len(&self) -> usize {
        self.neurons * (2 + self.space_dim + self.out_dim)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_len());
        p.extend_from_slice(&self.a0);
        p.extend_from_slice(&self.a1);
        p.extend_from_slice(&self.b);
        p.extend_from_slice(&self.y);
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                what: "flat parameter vector",
                expected: self.param_len(),
                got: p.len(),
            });
        }
        let n = self.neurons;
        let m = self.space_dim;
        self.a0.copy_from_slice(&p[..n]);
        self.a1.copy_from_slice(&p[n..n + n * m]);
        self.b.copy_from_slice(&p[n + n * m..n + n * m + n]);
        self.y.copy_from_slice(&p[n + n * m + n..]);
        Ok(())
    }

    /// Accumulates `weight * d(linfunc_c)/d(theta)` into `grad_out` for output
    /// coordinate `c`, with `grad_out` in the flat `[a0 | a1 | b | y]` layout.
    pub fn linfunc_param_grad(
        &self,
        lf: &LinFunc,
        c: usize,
        weight: f64,
        grad_out: &mut [f64],
    ) -> Result<()> {
        if grad_out.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                what: "gradient buffer",
                expected: self.param_len(),
                got: grad_out.len(),
            });
        }
        let act = self.activations(lf.t, &lf.u)?;
        let nn = self.neurons;
        let m = self.space_dim;
        let d = self.out_dim;
        let (a0_off, a1_off, b_off, y_off) = (0, nn, nn + nn * m, nn + nn * m + nn);
        for n in 0..nn {
            let row = &self.a1[n * m..(n + 1) * m];
            let yc = self.y[n * d + c];

            // The functional applied to this neuron's activation, split by
            // derivative order of rho so the z-chain rule reuses the pieces.
            let mut f0 = lf.value * act.val[n];
            let mut fz = lf.value * act.d1[n]; // d(factor)/dz
            let mut grad_dot = 0.0;
            if !lf.grad.is_empty() {
                for (cf, w) in lf.grad.iter().zip(row) {
                    grad_dot += cf * w;
                }
                f0 += grad_dot * act.d1[n];
                fz += grad_dot * act.d2[n];
            }
            let mut quad_av = Vec::with_capacity(lf.quad.len());
            for (coef, v) in &lf.quad {
                let mut av = 0.0;
                for (vl, w) in v.iter().zip(row) {
                    av += vl * w;
                }
                f0 += coef * av * av * act.d2[n];
                fz += coef * av * av * act.d3[n];
                quad_av.push((*coef, av));
            }

            // z_n = a0 t + a1'u - b.
            grad_out[a0_off + n] += weight * yc * fz * lf.t;
            grad_out[b_off + n] -= weight * yc * fz;
            for l in 0..m {
                // Chain through z plus the explicit a1 dependence of the
                // gradient and quadratic-form contractions.
                let mut g = fz * lf.u[l];
                if !lf.grad.is_empty() {
                    g += lf.grad[l] * act.d1[n];
                }
                for ((coef, av), v) in quad_av.iter().zip(lf.quad.iter().map(|(_, v)| v)) {
                    g += 2.0 * coef * av * v[l] * act.d2[n];
                }
                grad_out[a1_off + n * m + l] += weight * yc * g;
            }
            grad_out[y_off + n * d + c] += weight * f0;
        }
        Ok(())
    }
}

/// Adam optimizer configuration with the standard defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. Rejects non-finite gradients.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            what: "adam buffers",
            expected: params.len(),
            got: grads.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "adam gradient" });
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
    }
    Ok(())
}

/// Result of a readout least-squares solve.
#[derive(Debug, Clone)]
pub struct ReadoutFit {
    /// `N x d` solution matrix.
    pub weights: DMatrix<f64>,
    /// Set when the condition estimate exceeded `1e12` and the ridge floor
    /// was substituted.
    pub ill_conditioned: bool,
}

const CONDITION_LIMIT: f64 = 1e12;
const RIDGE_FLOOR: f64 = 1e-10;

/// Minimizes `|design Y - targets|_F^2 + ridge |Y|_F^2` by singular value
/// decomposition of the ridge-augmented stacked system.
pub fn fit_readout_least_squares(
    design: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    ridge: f64,
) -> Result<ReadoutFit> {
    if design.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            what: "design/target rows",
            expected: design.nrows(),
            got: targets.nrows(),
        });
    }
    if design.iter().chain(targets.iter()).any(|x| !x.is_finite()) || !ridge.is_finite() || ridge < 0.0 {
        return Err(Error::NonFinite { what: "least-squares input" });
    }
    match solve_lls(design, targets, ridge) {
        Some((weights, cond_ok)) if cond_ok => Ok(ReadoutFit { weights, ill_conditioned: false }),
        _ => {
            let ridge = ridge.max(RIDGE_FLOOR);
            let (weights, _) = solve_lls(design, targets, ridge)
                .ok_or(Error::NonFinite { what: "least-squares solve" })?;
            Ok(ReadoutFit { weights, ill_conditioned: true })
        }
    }
}

fn solve_lls(design: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Option<(DMatrix<f64>, bool)> {
    let n = design.ncols();
    let (a, t) = if ridge > 0.0 {
        let mut a = DMatrix::zeros(design.nrows() + n, n);
        a.view_mut((0, 0), design.shape()).copy_from(design);
        let s = libm::sqrt(ridge);
        for k in 0..n {
            a[(design.nrows() + k, k)] = s;
        }
        let mut t = DMatrix::zeros(design.nrows() + n, targets.ncols());
        t.view_mut((0, 0), targets.shape()).copy_from(targets);
        (a, t)
    } else {
        (design.clone(), targets.clone())
    };
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let smin = svd.singular_values.iter().fold(f64::INFINITY, |m, &s| m.min(s));
    if smax == 0.0 {
        return None;
    }
    let cond_ok = smin > 0.0 && smax / smin < CONDITION_LIMIT;
    let sol = svd.solve(&t, smax * 1e-15).ok()?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((sol, cond_ok))
}

/// Solves the symmetric positive semi-definite system `(G + ridge I) x = rhs`
/// by Cholesky, escalating the ridge tenfold until the factorization succeeds.
pub fn solve_regularized_normal_equations(
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    if gram.nrows() != gram.ncols() || gram.nrows() != rhs.nrows() {
        return Err(Error::DimensionMismatch {
            what: "normal-equations shapes",
            expected: gram.nrows(),
            got: rhs.nrows(),
        });
    }
    if gram.iter().chain(rhs.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "normal-equations input" });
    }
    let mut lambda = ridge.max(RIDGE_FLOOR);
    for _ in 0..40 {
        let mut a = gram.clone();
        for k in 0..a.nrows() {
            a[(k, k)] += lambda;
        }
        if let Some(chol) = a.cholesky() {
            return Ok(chol.solve(rhs));
        }
        lambda *= 10.0;
    }
    Err(Error::NonFinite { what: "normal-equations factorization" })
}

//! Chaos-expansion surrogates: one propagator network per multi-index,
//! combined with Wick polynomials of the scenario panel.
//!
//! Both the supervised (reference-matching) and the unsupervised (explicit
//! Euler residual) objectives are expressed through one residual-row
//! structure, so loss evaluation, readout least squares, and full Adam
//! training share the same assembly code.

use crate::basis::TimeBasis;
use crate::error::{Error, Result};
use crate::nets::{
    adam_step, solve_regularized_normal_equations, AdamConfig, AdamState, LinFunc, Net, SampleLaw,
};
use crate::spde::{heat_reference, hjm_forward, hjm_forward_du, vasicek_rate, zakai_signal_path,
    ProblemKind, ScenarioState, SpdeProblem, ZakaiParticleCloud, ZakaiRefConfig};
use crate::wick::{brownian_path, enumerate_indices, wick_values, GaussianPanel, MultiIndex};
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

/// Truncation `(I, J, K)` of the chaos expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub i_count: usize,
    pub j_count: usize,
    pub order: u32,
}

/// Which propagator family the surrogate carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Fully trained networks, one independent initialization per index.
    Deterministic,
    /// Frozen random inner parameters, trained readouts. With `shared`, all
    /// indices reuse the same inner draw.
    RandomFeature { shared: bool },
}

/// Chaos surrogate `X(t, u) = sum_alpha xi_alpha net_alpha(t, u)`.
#[derive(Debug, Clone)]
pub struct ChaosModel {
    truncation: Truncation,
    indices: Vec<MultiIndex>,
    nets: Vec<Net>,
    kind: ModelKind,
}

impl ChaosModel {
    /// Fully trainable surrogate with independently initialized networks.
    pub fn deterministic(
        truncation: Truncation,
        neurons: usize,
        space_dim: usize,
        out_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let indices = enumerate_indices(truncation.i_count, truncation.j_count, truncation.order)?;
        let nets = indices
            .iter()
            .enumerate()
            .map(|(a, _)| Net::init_deterministic(neurons, space_dim, out_dim, seed, a as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChaosModel { truncation, indices, nets, kind: ModelKind::Deterministic })
    }

    /// Random-feature surrogate with frozen inner parameters.
    pub fn random_feature(
        truncation: Truncation,
        neurons: usize,
        space_dim: usize,
        out_dim: usize,
        seed: u64,
        law: SampleLaw,
        shared: bool,
    ) -> Result<Self> {
        let indices = enumerate_indices(truncation.i_count, truncation.j_count, truncation.order)?;
        let mut nets = Vec::with_capacity(indices.len());
        if shared {
            let base = Net::sample_random(neurons, space_dim, out_dim, seed, law, 0)?;
            nets.resize(indices.len(), base);
        } else {
            for a in 0..indices.len() {
                nets.push(Net::sample_random(neurons, space_dim, out_dim, seed, law, a as u64)?);
            }
        }
        Ok(ChaosModel { truncation, indices, nets, kind: ModelKind::RandomFeature { shared } })
    }

    /// Reassembles a surrogate from parts (used by deserialization).
    pub fn from_parts(
        truncation: Truncation,
        nets: Vec<Net>,
        kind: ModelKind,
    ) -> Result<Self> {
        let indices = enumerate_indices(truncation.i_count, truncation.j_count, truncation.order)?;
        if nets.len() != indices.len() {
            return Err(Error::DimensionMismatch {
                what: "propagator count",
                expected: indices.len(),
                got: nets.len(),
            });
        }
        Ok(ChaosModel { truncation, indices, nets, kind })
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    /// Surrogate value given precomputed Wick values of one scenario.
    pub fn eval(&self, wick_row: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        self.check_row(wick_row)?;
        let mut out = vec![0.0; self.nets[0].out_dim()];
        for (net, &xi) in self.nets.iter().zip(wick_row) {
            for (o, v) in out.iter_mut().zip(net.eval(t, u)?) {
                *o += xi * v;
            }
        }
        Ok(out)
    }

    /// A linear functional of the surrogate (value, space derivative, ...),
    /// per output coordinate.
    pub fn apply(&self, wick_row: &[f64], lf: &LinFunc) -> Result<Vec<f64>> {
        self.check_row(wick_row)?;
        let mut out = vec![0.0; self.nets[0].out_dim()];
        for (net, &xi) in self.nets.iter().zip(wick_row) {
            for (o, v) in out.iter_mut().zip(net.linfunc_eval(lf)?) {
                *o += xi * v;
            }
        }
        Ok(out)
    }

    /// Splits the surrogate value by chaos order `|alpha|`.
    pub fn decompose_by_order(
        &self,
        wick_row: &[f64],
        t: f64,
        u: &[f64],
    ) -> Result<BTreeMap<u32, Vec<f64>>> {
        self.check_row(wick_row)?;
        let d = self.nets[0].out_dim();
        let mut map: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for ((net, &xi), alpha) in self.nets.iter().zip(wick_row).zip(&self.indices) {
            let slot = map.entry(alpha.degree()).or_insert_with(|| vec![0.0; d]);
            for (o, v) in slot.iter_mut().zip(net.eval(t, u)?) {
                *o += xi * v;
            }
        }
        Ok(map)
    }

    fn check_row(&self, wick_row: &[f64]) -> Result<()> {
        if wick_row.len() != self.indices.len() {
            return Err(Error::DimensionMismatch {
                what: "wick value row",
                expected: self.indices.len(),
                got: wick_row.len(),
            });
        }
        if self.nets.is_empty() {
            return Err(Error::InvalidParameter { what: "empty surrogate" });
        }
        Ok(())
    }
}

/// Any indexed family of propagators a residual system can be evaluated on.
/// The surrogate implements it with its networks; tests can plug closed-form
/// propagators into the same loss code.
pub trait PropagatorSet {
    fn count(&self) -> usize;
    /// The functional applied to propagator `alpha_idx` (first output coordinate).
    fn apply(&self, alpha_idx: usize, lf: &LinFunc) -> Result<f64>;
}

impl PropagatorSet for ChaosModel {
    fn count(&self) -> usize {
        self.indices.len()
    }

    fn apply(&self, alpha_idx: usize, lf: &LinFunc) -> Result<f64> {
        Ok(self.nets[alpha_idx].linfunc_eval(lf)?[0])
    }
}

/// Wick polynomial values for every scenario, `scenarios x |A|` row-major.
#[derive(Debug, Clone)]
pub struct WickMatrix {
    scenarios: usize,
    count: usize,
    values: Vec<f64>,
}

impl WickMatrix {
    pub fn new(indices: &[MultiIndex], panel: &GaussianPanel) -> Result<Self> {
        let mut values = Vec::with_capacity(panel.scenarios() * indices.len());
        for m in 0..panel.scenarios() {
            values.extend(wick_values(indices, panel, m)?);
        }
        Ok(WickMatrix { scenarios: panel.scenarios(), count: indices.len(), values })
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.count..(m + 1) * self.count]
    }
}

/// Scenario subset the loss or fit runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

/// Shared space-time evaluation grid: times, spatial points, the scenario
/// split, and the Sobolev weights per derivative slot and point.
#[derive(Debug, Clone)]
pub struct TrainingGrid {
    times: Vec<f64>,
    points: Vec<f64>,
    space_dim: usize,
    scenarios: usize,
    train_count: usize,
    orders: Vec<Option<usize>>,
    /// `weights[beta_idx][m3]`.
    weights: Vec<Vec<f64>>,
}

impl TrainingGrid {
    pub fn new(
        problem: &SpdeProblem,
        times: Vec<f64>,
        points: Vec<f64>,
        scenarios: usize,
        train_fraction: f64,
    ) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter { what: "grid times must be strictly increasing" });
        }
        if times[0] < 0.0 || *times.last().unwrap() > problem.horizon {
            return Err(Error::OutOfDomain { what: "grid times", value: *times.last().unwrap() });
        }
        let m = problem.space_dim;
        if points.is_empty() || points.len() % m != 0 {
            return Err(Error::DimensionMismatch {
                what: "spatial point array",
                expected: m,
                got: points.len(),
            });
        }
        if scenarios == 0 || !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidParameter { what: "scenario count or train fraction" });
        }
        let point_count = points.len() / m;
        let orders = problem.derivative_orders();
        let weights = (0..orders.len())
            .map(|b| (0..point_count).map(|m3| problem.loss_weight(b, m3)).collect())
            .collect();
        let train_count = libm::ceil(train_fraction * scenarios as f64) as usize;
        Ok(TrainingGrid { times, points, space_dim: m, scenarios, train_count, orders, weights })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn point_count(&self) -> usize {
        self.points.len() / self.space_dim
    }

    pub fn point(&self, m3: usize) -> &[f64] {
        &self.points[m3 * self.space_dim..(m3 + 1) * self.space_dim]
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn train_count(&self) -> usize {
        self.train_count
    }

    pub fn derivative_orders(&self) -> &[Option<usize>] {
        &self.orders
    }

    pub fn weight(&self, beta_idx: usize, m3: usize) -> f64 {
        self.weights[beta_idx][m3]
    }

    fn split_range(&self, split: Split) -> core::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_count,
            Split::Test => self.train_count..self.scenarios,
            Split::All => 0..self.scenarios,
        }
    }
}

/// Reference values per `(beta, time, point, scenario)`.
#[derive(Debug, Clone)]
pub struct TargetSet {
    values: Vec<f64>,
    beta_count: usize,
    time_count: usize,
    point_count: usize,
    scenarios: usize,
    /// Reference evaluations whose Monte-Carlo standard error was above the
    /// configured threshold (filtering problem only).
    pub flagged: usize,
}

impl TargetSet {
    /// Builds targets on a grid from an arbitrary value source
    /// `(beta_idx, m2, m3, m1) -> value`.
    pub fn from_values(grid: &TrainingGrid, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let beta_count = grid.orders.len();
        let time_count = grid.times.len();
        let point_count = grid.point_count();
        let scenarios = grid.scenarios;
        let mut values = Vec::with_capacity(beta_count * time_count * point_count * scenarios);
        for b in 0..beta_count {
            for m2 in 0..time_count {
                for m3 in 0..point_count {
                    for m1 in 0..scenarios {
                        values.push(f(b, m2, m3, m1));
                    }
                }
            }
        }
        TargetSet { values, beta_count, time_count, point_count, scenarios, flagged: 0 }
    }

    pub fn value(&self, beta_idx: usize, m2: usize, m3: usize, m1: usize) -> f64 {
        let idx = ((beta_idx * self.time_count + m2) * self.point_count + m3) * self.scenarios + m1;
        self.values[idx]
    }
}

/// Supervised targets from the problem's reference solution on the full grid.
pub fn supervised_targets(
    problem: &SpdeProblem,
    panel: &GaussianPanel,
    basis: &TimeBasis,
    grid: &TrainingGrid,
    zakai_cfg: Option<&ZakaiRefConfig>,
) -> Result<TargetSet> {
    if grid.scenarios != panel.scenarios() {
        return Err(Error::DimensionMismatch {
            what: "grid scenarios",
            expected: panel.scenarios(),
            got: grid.scenarios,
        });
    }
    let beta_count = grid.orders.len();
    let time_count = grid.times.len();
    let point_count = grid.point_count();
    let scenarios = grid.scenarios;
    let mut values = vec![0.0; beta_count * time_count * point_count * scenarios];
    let mut flagged = 0;
    let idx = |b: usize, m2: usize, m3: usize, m1: usize| {
        ((b * time_count + m2) * point_count + m3) * scenarios + m1
    };
    match problem.kind {
        ProblemKind::Heat { .. } => {
            for m1 in 0..scenarios {
                for (m2, &t) in grid.times.iter().enumerate() {
                    for m3 in 0..point_count {
                        values[idx(0, m2, m3, m1)] =
                            heat_reference(problem, panel, basis, m1, t, grid.point(m3))?;
                    }
                }
            }
        }
        ProblemKind::Hjm { mu, kappa, sigma, .. } => {
            for m1 in 0..scenarios {
                for (m2, &t) in grid.times.iter().enumerate() {
                    let r_t = vasicek_rate(problem, panel, basis, m1, t)?;
                    for m3 in 0..point_count {
                        let u = grid.point(m3)[0];
                        values[idx(0, m2, m3, m1)] = hjm_forward(r_t, mu, kappa, sigma, u);
                        values[idx(1, m2, m3, m1)] = hjm_forward_du(r_t, mu, kappa, sigma, u);
                    }
                }
            }
        }
        ProblemKind::Zakai { .. } => {
            let cfg = zakai_cfg.copied().unwrap_or_default();
            for m1 in 0..scenarios {
                let cloud =
                    ZakaiParticleCloud::simulate(problem, panel, basis, m1, &grid.times, &cfg)?;
                for m2 in 0..time_count {
                    for m3 in 0..point_count {
                        let est = cloud.density(m2, grid.point(m3))?;
                        values[idx(0, m2, m3, m1)] = est.value;
                        if est.flagged {
                            flagged += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(TargetSet { values, beta_count, time_count, point_count, scenarios, flagged })
}

enum Coef {
    Fixed(f64),
    PerScenario(Vec<f64>),
}

struct RowTerm {
    lf: LinFunc,
    coef: Coef,
}

enum Rhs {
    Fixed(f64),
    PerScenario(Vec<f64>),
}

struct ResidualRow {
    weight: f64,
    terms: Vec<RowTerm>,
    rhs: Rhs,
}

impl ResidualRow {
    fn rhs_at(&self, m1: usize) -> f64 {
        match &self.rhs {
            Rhs::Fixed(v) => *v,
            Rhs::PerScenario(v) => v[m1],
        }
    }
}

/// One of the two training objectives assembled as weighted residual rows,
/// each a linear combination of functionals of the propagators minus a
/// right-hand side.
pub struct ResidualSystem {
    rows: Vec<ResidualRow>,
    scenarios: usize,
    train_count: usize,
    /// Rows per scenario before weight pruning, for the loss normalization.
    slot_count: usize,
    /// Whether any term coefficient varies with the scenario.
    scenario_dependent: bool,
}

impl ResidualSystem {
    /// Reference-matching objective: one row per derivative slot, grid time,
    /// and spatial point with a positive Sobolev weight.
    pub fn supervised(
        problem: &SpdeProblem,
        grid: &TrainingGrid,
        targets: &TargetSet,
    ) -> Result<Self> {
        if targets.scenarios != grid.scenarios
            || targets.time_count != grid.times.len()
            || targets.point_count != grid.point_count()
            || targets.beta_count != grid.orders.len()
        {
            return Err(Error::DimensionMismatch {
                what: "target set shape",
                expected: grid.scenarios,
                got: targets.scenarios,
            });
        }
        let _ = problem;
        let mut rows = Vec::new();
        for (b, order) in grid.orders.iter().enumerate() {
            for (m2, &t) in grid.times.iter().enumerate() {
                for m3 in 0..grid.point_count() {
                    let w = grid.weight(b, m3);
                    if w == 0.0 {
                        continue;
                    }
                    let u = grid.point(m3).to_vec();
                    let lf = match order {
                        None => LinFunc::value_at(t, u),
                        Some(l) => LinFunc::deriv_at(t, u, *l),
                    };
                    let rhs = (0..grid.scenarios).map(|m1| targets.value(b, m2, m3, m1)).collect();
                    rows.push(ResidualRow {
                        weight: w,
                        terms: vec![RowTerm { lf, coef: Coef::Fixed(1.0) }],
                        rhs: Rhs::PerScenario(rhs),
                    });
                }
            }
        }
        Ok(ResidualSystem {
            rows,
            scenarios: grid.scenarios,
            train_count: grid.train_count,
            slot_count: grid.orders.len() * grid.times.len() * grid.point_count(),
            scenario_dependent: false,
        })
    }

    /// Explicit Euler residual objective. Requires the grid to start at time
    /// zero; row `(beta, m2, m3)` matches the scheme value at `t_{m2}` built
    /// from generator, drift, and diffusion contributions over all earlier
    /// grid steps.
    pub fn unsupervised(
        problem: &SpdeProblem,
        grid: &TrainingGrid,
        panel: &GaussianPanel,
        basis: &TimeBasis,
    ) -> Result<Self> {
        if grid.times[0] != 0.0 {
            return Err(Error::InvalidParameter { what: "euler residual grid must start at time zero" });
        }
        if grid.scenarios != panel.scenarios() {
            return Err(Error::DimensionMismatch {
                what: "grid scenarios",
                expected: panel.scenarios(),
                got: grid.scenarios,
            });
        }
        let steps = grid.times.len();
        let scenarios = grid.scenarios;
        let state_dep = problem.state_dependent_coefficients();

        // Reconstructed noise at every grid time per scenario, and the signal
        // path when the coefficients depend on it.
        let mut paths: Vec<Vec<f64>> = Vec::with_capacity(scenarios * steps);
        for m1 in 0..scenarios {
            for &t in &grid.times {
                paths.push(brownian_path(panel, basis, &problem.eigenvalues, m1, t)?);
            }
        }
        let signals: Vec<Vec<Vec<f64>>> = if state_dep {
            (0..scenarios)
                .map(|m1| zakai_signal_path(problem, panel, basis, m1, &grid.times))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        let mut rows = Vec::new();
        for (b, order) in grid.orders.iter().enumerate() {
            for m3 in 0..grid.point_count() {
                let w = grid.weight(b, m3);
                if w == 0.0 {
                    continue;
                }
                let u = grid.point(m3);
                let action = problem.generator_action(u)?;
                for m2 in 0..steps {
                    let mut terms = Vec::with_capacity(1 + 2 * m2);
                    let lf_eval = match order {
                        None => LinFunc::value_at(grid.times[m2], u.to_vec()),
                        Some(l) => LinFunc::deriv_at(grid.times[m2], u.to_vec(), *l),
                    };
                    terms.push(RowTerm { lf: lf_eval, coef: Coef::Fixed(1.0) });

                    let mut rhs_fixed = match order {
                        None => problem.chi0(u)?,
                        Some(l) => problem.chi0_deriv(u, *l)?,
                    };
                    let mut rhs_var = vec![0.0; scenarios];
                    let mut any_var_rhs = false;

                    for l in 1..=m2 {
                        let t_prev = grid.times[l - 1];
                        let dt = grid.times[l] - grid.times[l - 1];

                        // Generator contribution, derivative-adjusted for the
                        // first-order norm slots.
                        let lf_gen = match order {
                            None => LinFunc {
                                t: t_prev,
                                u: u.to_vec(),
                                value: action.value,
                                grad: action.grad.clone(),
                                quad: action.quad.clone(),
                            },
                            Some(k) => {
                                if !matches!(problem.kind, ProblemKind::Hjm { .. }) {
                                    return Err(Error::InvalidParameter {
                                        what: "derivative residual slots only supported for first-order generators",
                                    });
                                }
                                let mut dir = vec![0.0; u.len()];
                                dir[*k] = 1.0;
                                LinFunc {
                                    t: t_prev,
                                    u: u.to_vec(),
                                    value: 0.0,
                                    grad: Vec::new(),
                                    quad: vec![(1.0, dir)],
                                }
                            }
                        };
                        terms.push(RowTerm { lf: lf_gen, coef: Coef::Fixed(-dt) });

                        // Multiplicative drift and diffusion (value slots only;
                        // they vanish for the first-order-norm problem).
                        if state_dep && order.is_none() {
                            let mut coefs = vec![0.0; scenarios];
                            for m1 in 0..scenarios {
                                let state = ScenarioState { signal: Some(&signals[m1][l - 1]) };
                                let f1 = problem.drift_f1(t_prev, u, &state)?;
                                let dw = increment(&paths, steps, m1, l);
                                let b1 = problem.diffusion_b1(u, &dw)?;
                                coefs[m1] = -(dt * f1 + b1);
                            }
                            terms.push(RowTerm {
                                lf: LinFunc::value_at(t_prev, u.to_vec()),
                                coef: Coef::PerScenario(coefs),
                            });
                        }

                        // Additive drift and diffusion go to the right-hand side.
                        match order {
                            None => {
                                rhs_fixed += dt * problem.drift_f0(t_prev, u)?;
                                for m1 in 0..scenarios {
                                    let dw = increment(&paths, steps, m1, l);
                                    let v = problem.diffusion_b0(u, &dw)?;
                                    if v != 0.0 {
                                        rhs_var[m1] += v;
                                        any_var_rhs = true;
                                    }
                                }
                            }
                            Some(k) => {
                                rhs_fixed += dt * problem.drift_f0_deriv(t_prev, u, *k)?;
                                for m1 in 0..scenarios {
                                    let dw = increment(&paths, steps, m1, l);
                                    let v = problem.diffusion_b0_deriv(u, &dw, *k)?;
                                    if v != 0.0 {
                                        rhs_var[m1] += v;
                                        any_var_rhs = true;
                                    }
                                }
                            }
                        }
                    }

                    let rhs = if any_var_rhs {
                        for v in &mut rhs_var {
                            *v += rhs_fixed;
                        }
                        Rhs::PerScenario(rhs_var)
                    } else {
                        Rhs::Fixed(rhs_fixed)
                    };
                    rows.push(ResidualRow { weight: w, terms, rhs });
                }
            }
        }
        Ok(ResidualSystem {
            rows,
            scenarios,
            train_count: grid.train_count,
            slot_count: grid.orders.len() * steps * grid.point_count(),
            scenario_dependent: state_dep,
        })
    }

    fn split_range(&self, split: Split) -> core::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_count,
            Split::Test => self.train_count..self.scenarios,
            Split::All => 0..self.scenarios,
        }
    }

    fn norm_constant(&self, split: Split) -> f64 {
        (self.split_range(split).len().max(1) * self.slot_count) as f64
    }

    /// Functional values of every term on every propagator:
    /// `values[row][term][alpha]`.
    fn term_values<P: PropagatorSet>(&self, props: &P) -> Result<Vec<Vec<Vec<f64>>>> {
        let count = props.count();
        self.rows
            .iter()
            .map(|row| {
                row.terms
                    .iter()
                    .map(|term| (0..count).map(|a| props.apply(a, &term.lf)).collect())
                    .collect()
            })
            .collect()
    }

    /// Mean weighted squared residual over the split.
    pub fn loss<P: PropagatorSet>(&self, props: &P, wick: &WickMatrix, split: Split) -> Result<f64> {
        if wick.scenarios() != self.scenarios || wick.count() != props.count() {
            return Err(Error::DimensionMismatch {
                what: "wick matrix shape",
                expected: self.scenarios,
                got: wick.scenarios(),
            });
        }
        let count = props.count();
        let values = self.term_values(props)?;
        // Collapse the scenario-independent terms once per row.
        let mut fixed = vec![vec![0.0; count]; self.rows.len()];
        for (r, row) in self.rows.iter().enumerate() {
            for (term, vals) in row.terms.iter().zip(&values[r]) {
                if let Coef::Fixed(c) = term.coef {
                    for (f, v) in fixed[r].iter_mut().zip(vals) {
                        *f += c * v;
                    }
                }
            }
        }
        let mut acc = 0.0;
        for m1 in self.split_range(split) {
            let xi = wick.row(m1);
            for (r, row) in self.rows.iter().enumerate() {
                let mut val = 0.0;
                for (f, x) in fixed[r].iter().zip(xi) {
                    val += f * x;
                }
                for (term, vals) in row.terms.iter().zip(&values[r]) {
                    if let Coef::PerScenario(c) = &term.coef {
                        let mut s = 0.0;
                        for (v, x) in vals.iter().zip(xi) {
                            s += v * x;
                        }
                        val += c[m1] * s;
                    }
                }
                let res = row.weight * (val - row.rhs_at(m1));
                acc += res * res;
            }
        }
        Ok(acc / self.norm_constant(split))
    }
}

/// Report of a readout least-squares fit.
#[derive(Debug, Clone)]
pub struct ReadoutReport {
    pub train_loss: f64,
    /// Ridge actually applied after any escalation.
    pub ridge: f64,
}

/// Fits the readouts of a random-feature surrogate on the train split by
/// regularized normal equations. Scenario-independent coefficients factorize
/// the Gram matrix through the Wick second-moment matrix; otherwise the
/// system is accumulated scenario by scenario.
pub fn fit_random_feature(
    model: &mut ChaosModel,
    system: &ResidualSystem,
    wick: &WickMatrix,
    ridge: f64,
) -> Result<ReadoutReport> {
    let ModelKind::RandomFeature { shared } = model.kind else {
        return Err(Error::InvalidParameter { what: "least-squares fit requires a random-feature surrogate" });
    };
    if model.nets[0].out_dim() != 1 {
        return Err(Error::InvalidParameter { what: "readout fit supports scalar outputs" });
    }
    let count = model.indices.len();
    let neurons = model.nets[0].neurons();
    let q = count * neurons;

    // Per-neuron feature factors of every term: shared inner parameters give
    // one factor vector per term, otherwise one per propagator.
    let feat_sets = if shared { 1 } else { count };
    let mut feats: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(feat_sets);
    for a in 0..feat_sets {
        let net = &model.nets[a];
        feats.push(
            system
                .rows
                .iter()
                .map(|row| row.terms.iter().map(|term| net.linfunc_features(&term.lf)).collect())
                .collect::<Result<_>>()?,
        );
    }
    let feat = |a: usize, r: usize, t: usize| -> &[f64] { &feats[if shared { 0 } else { a }][r][t] };

    let range = system.split_range(Split::Train);
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DMatrix::<f64>::zeros(q, 1);

    if !system.scenario_dependent {
        // Wick second moments over the train scenarios.
        let mut xi2 = DMatrix::<f64>::zeros(count, count);
        for m1 in range.clone() {
            let xi = wick.row(m1);
            for a in 0..count {
                for b in 0..count {
                    xi2[(a, b)] += xi[a] * xi[b];
                }
            }
        }
        // Collapsed feature vector per row and propagator.
        let mut g = vec![vec![0.0; neurons]; if shared { system.rows.len() } else { system.rows.len() * count }];
        for (r, row) in system.rows.iter().enumerate() {
            for a in 0..feat_sets {
                let slot = if shared { r } else { r * count + a };
                for (t, term) in row.terms.iter().enumerate() {
                    let Coef::Fixed(c) = term.coef else { unreachable!() };
                    for (gv, fv) in g[slot].iter_mut().zip(feat(a, r, t)) {
                        *gv += c * fv;
                    }
                }
            }
        }
        // Feature Gram blocks and right-hand side.
        for a in 0..count {
            let fa = if shared { 0 } else { a };
            for b in a..count {
                let fb = if shared { 0 } else { b };
                let mut block = DMatrix::<f64>::zeros(neurons, neurons);
                for (r, row) in system.rows.iter().enumerate() {
                    let w2 = row.weight * row.weight;
                    let ga = &g[if shared { r } else { r * count + fa }];
                    let gb = &g[if shared { r } else { r * count + fb }];
                    for n in 0..neurons {
                        let s = w2 * ga[n];
                        for n2 in 0..neurons {
                            block[(n, n2)] += s * gb[n2];
                        }
                    }
                }
                for n in 0..neurons {
                    for n2 in 0..neurons {
                        let v = block[(n, n2)];
                        gram[(a * neurons + n, b * neurons + n2)] = xi2[(a, b)] * v;
                        if b != a {
                            gram[(b * neurons + n2, a * neurons + n)] = xi2[(a, b)] * v;
                        }
                    }
                }
            }
            // Scenario-weighted targets per row.
            for (r, row) in system.rows.iter().enumerate() {
                let mut tgt = 0.0;
                for m1 in range.clone() {
                    tgt += wick.row(m1)[a] * row.rhs_at(m1);
                }
                let w2 = row.weight * row.weight;
                let ga = &g[if shared { r } else { r * count + fa }];
                for n in 0..neurons {
                    rhs[(a * neurons + n, 0)] += w2 * ga[n] * tgt;
                }
            }
        }
    } else {
        // Scenario-dependent coefficients: accumulate the full normal
        // equations row by row.
        let mut coef = vec![0.0; q];
        for m1 in range.clone() {
            let xi = wick.row(m1);
            for (r, row) in system.rows.iter().enumerate() {
                for v in coef.iter_mut() {
                    *v = 0.0;
                }
                for (t, term) in row.terms.iter().enumerate() {
                    let c = match &term.coef {
                        Coef::Fixed(c) => *c,
                        Coef::PerScenario(cs) => cs[m1],
                    };
                    if c == 0.0 {
                        continue;
                    }
                    for a in 0..count {
                        let f = feat(a, r, t);
                        let s = c * xi[a];
                        for n in 0..neurons {
                            coef[a * neurons + n] += s * f[n];
                        }
                    }
                }
                let w2 = row.weight * row.weight;
                let tgt = row.rhs_at(m1);
                for i in 0..q {
                    let ci = w2 * coef[i];
                    if ci == 0.0 {
                        continue;
                    }
                    for j in i..q {
                        gram[(i, j)] += ci * coef[j];
                    }
                    rhs[(i, 0)] += ci * tgt;
                }
            }
        }
        for i in 0..q {
            for j in 0..i {
                gram[(i, j)] = gram[(j, i)];
            }
        }
    }

    let mut lambda = ridge.max(1e-10);
    let sol = loop {
        match solve_regularized_normal_equations(&gram, &rhs, lambda) {
            Ok(sol) => break sol,
            Err(_) if lambda < 1e6 => lambda *= 10.0,
            Err(e) => return Err(e),
        }
    };
    for a in 0..count {
        let col: Vec<f64> = (0..neurons).map(|n| sol[(a * neurons + n, 0)]).collect();
        model.nets[a].set_readouts(&col)?;
    }
    let train_loss = system.loss(model, wick, Split::Train)?;
    Ok(ReadoutReport { train_loss, ridge: lambda })
}

/// Configuration of full gradient training.
#[derive(Debug, Clone, Copy)]
pub struct AdamTrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch: usize,
    /// Record a loss trace point every this many epochs (0 disables tracing).
    pub trace_every: usize,
    /// Seed of the batch-order shuffle.
    pub shuffle_seed: u64,
}

/// One recorded point of the training loss trace.
#[derive(Debug, Clone, Copy)]
pub struct TracePoint {
    pub epoch: usize,
    pub train_loss: f64,
    /// Loss over the held-out scenarios at the same point; zero when the
    /// split has no test scenarios.
    pub test_loss: f64,
}

/// Report of a gradient-training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<TracePoint>,
    pub final_train_loss: f64,
}

/// Gradient of the mean weighted squared residual over the given scenarios
/// with respect to the flat parameters of all propagators, written into
/// `grads` in the concatenated `[net_0 | net_1 | ...]` layout.
fn grad_over_scenarios(
    model: &ChaosModel,
    system: &ResidualSystem,
    wick: &WickMatrix,
    scenarios: &[usize],
    grads: &mut [f64],
) -> Result<()> {
    let count = model.indices.len();
    let plen = model.nets[0].param_len();
    if grads.len() != count * plen {
        return Err(Error::DimensionMismatch {
            what: "gradient buffer",
            expected: count * plen,
            got: grads.len(),
        });
    }
    let values = system.term_values(model)?;
    for g in grads.iter_mut() {
        *g = 0.0;
    }
    let norm = (scenarios.len().max(1) * system.slot_count) as f64;
    for (r, row) in system.rows.iter().enumerate() {
        // Residuals of this row over the scenarios, then one gradient
        // accumulation per (term, propagator) with the scenario sum folded
        // into the weight.
        let w2 = row.weight * row.weight;
        let mut term_coefs: Vec<Vec<f64>> = vec![Vec::with_capacity(scenarios.len()); row.terms.len()];
        let mut residuals = Vec::with_capacity(scenarios.len());
        for &m1 in scenarios {
            let xi = wick.row(m1);
            let mut val = 0.0;
            for (t, term) in row.terms.iter().enumerate() {
                let c = match &term.coef {
                    Coef::Fixed(c) => *c,
                    Coef::PerScenario(cs) => cs[m1],
                };
                term_coefs[t].push(c);
                let mut s = 0.0;
                for (v, x) in values[r][t].iter().zip(xi) {
                    s += v * x;
                }
                val += c * s;
            }
            residuals.push(val - row.rhs_at(m1));
        }
        for (t, term) in row.terms.iter().enumerate() {
            for a in 0..count {
                let mut scale = 0.0;
                for (bi, &m1) in scenarios.iter().enumerate() {
                    scale += residuals[bi] * term_coefs[t][bi] * wick.row(m1)[a];
                }
                scale *= 2.0 * w2 / norm;
                if scale != 0.0 {
                    model.nets[a].linfunc_param_grad(
                        &term.lf,
                        0,
                        scale,
                        &mut grads[a * plen..(a + 1) * plen],
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// Analytic gradient of `ResidualSystem::loss` over a split, for gradient
/// verification and external optimizers.
pub fn loss_param_grad(
    model: &ChaosModel,
    system: &ResidualSystem,
    wick: &WickMatrix,
    split: Split,
) -> Result<Vec<f64>> {
    if model.nets[0].out_dim() != 1 {
        return Err(Error::InvalidParameter { what: "loss gradient supports scalar outputs" });
    }
    let scenarios: Vec<usize> = system.split_range(split).collect();
    let mut grads = vec![0.0; model.indices.len() * model.nets[0].param_len()];
    grad_over_scenarios(model, system, wick, &scenarios, &mut grads)?;
    Ok(grads)
}

/// Trains all propagator parameters with Adam on mini-batches of scenarios.
pub fn train_adam(
    model: &mut ChaosModel,
    system: &ResidualSystem,
    wick: &WickMatrix,
    cfg: &AdamTrainConfig,
) -> Result<TrainReport> {
    if model.kind != ModelKind::Deterministic {
        return Err(Error::InvalidParameter { what: "gradient training requires a deterministic surrogate" });
    }
    if model.nets[0].out_dim() != 1 {
        return Err(Error::InvalidParameter { what: "gradient training supports scalar outputs" });
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParameter { what: "batch size and epochs must be positive" });
    }
    let plen = model.nets[0].param_len();
    let train: Vec<usize> = system.split_range(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidParameter { what: "gradient training needs train scenarios" });
    }

    let mut params: Vec<f64> = model.nets.iter().flat_map(|n| n.params_flat()).collect();
    let mut state = AdamState::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let mut trace = Vec::new();

    for epoch in 0..cfg.epochs {
        train_adam_epoch(model, system, wick, cfg, epoch, &mut params, &mut state, &mut grads)?;
        if cfg.trace_every > 0 && (epoch % cfg.trace_every == 0 || epoch + 1 == cfg.epochs) {
            for (a, net) in model.nets.iter_mut().enumerate() {
                net.set_params_flat(&params[a * plen..(a + 1) * plen])?;
            }
            let test_loss = if system.split_range(Split::Test).len() > 0 {
                system.loss(model, wick, Split::Test)?
            } else {
                0.0
            };
            trace.push(TracePoint {
                epoch,
                train_loss: system.loss(model, wick, Split::Train)?,
                test_loss,
            });
        }
    }
    for (a, net) in model.nets.iter_mut().enumerate() {
        net.set_params_flat(&params[a * plen..(a + 1) * plen])?;
    }
    let final_train_loss = system.loss(model, wick, Split::Train)?;
    Ok(TrainReport { trace, final_train_loss })
}

/// Runs one epoch of mini-batch Adam over the training scenarios. The
/// scenario order is a deterministic function of `(shuffle_seed, epoch)`, so
/// callers may drive epochs one at a time (for external tracing or timing)
/// and obtain the same trajectory as a single `train_adam` call. On return
/// `model` holds the parameters of the last completed step.
#[allow(clippy::too_many_arguments)]
pub fn train_adam_epoch(
    model: &mut ChaosModel,
    system: &ResidualSystem,
    wick: &WickMatrix,
    cfg: &AdamTrainConfig,
    epoch: usize,
    params: &mut [f64],
    state: &mut AdamState,
    grads: &mut [f64],
) -> Result<()> {
    let plen = model.nets[0].param_len();
    let train: Vec<usize> = system.split_range(Split::Train).collect();
    let mut order = train;
    for k in (1..order.len()).rev() {
        let r = crate::rng::bits(cfg.shuffle_seed, epoch as u64, k as u64) as usize % (k + 1);
        order.swap(k, r);
    }
    for batch in order.chunks(cfg.batch) {
        for (a, net) in model.nets.iter_mut().enumerate() {
            net.set_params_flat(&params[a * plen..(a + 1) * plen])?;
        }
        grad_over_scenarios(model, system, wick, batch, grads)?;
        adam_step(params, grads, state, &cfg.adam)?;
    }
    for (a, net) in model.nets.iter_mut().enumerate() {
        net.set_params_flat(&params[a * plen..(a + 1) * plen])?;
    }
    Ok(())
}

/// Relative error of the surrogate against the targets at one grid time,
/// in the problem's weighted empirical norm over the split scenarios.
pub fn relative_error(
    model: &ChaosModel,
    grid: &TrainingGrid,
    wick: &WickMatrix,
    targets: &TargetSet,
    time_index: usize,
    split: Split,
) -> Result<f64> {
    if time_index >= grid.times.len() {
        return Err(Error::IndexOutOfRange {
            what: "grid time index",
            index: time_index,
            limit: grid.times.len(),
        });
    }
    let t = grid.times[time_index];
    let mut num = 0.0;
    let mut den = 0.0;
    for m1 in grid.split_range(split) {
        let xi = wick.row(m1);
        for (b, order) in grid.orders.iter().enumerate() {
            for m3 in 0..grid.point_count() {
                let w = grid.weight(b, m3);
                if w == 0.0 {
                    continue;
                }
                let lf = match order {
                    None => LinFunc::value_at(t, grid.point(m3).to_vec()),
                    Some(l) => LinFunc::deriv_at(t, grid.point(m3).to_vec(), *l),
                };
                let val = model.apply(xi, &lf)?[0];
                let tgt = targets.value(b, time_index, m3, m1);
                num += w * w * (val - tgt) * (val - tgt);
                den += w * w * tgt * tgt;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::NonFinite { what: "relative error denominator" });
    }
    Ok(libm::sqrt(num / den))
}

fn increment(paths: &[Vec<f64>], steps: usize, m1: usize, l: usize) -> Vec<f64> {
    let prev = &paths[m1 * steps + l - 1];
    let cur = &paths[m1 * steps + l];
    cur.iter().zip(prev).map(|(a, b)| a - b).collect()
}

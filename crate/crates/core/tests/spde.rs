use approx::{assert_abs_diff_eq, assert_relative_eq};
use chaos_spde::basis::TimeBasis;
use chaos_spde::spde::{
    heat_reference, heat_semigroup_chi0, hjm_forward, hjm_forward_du, vasicek_rate,
    zakai_signal_path, SpdeProblem, ZakaiParticleCloud, ZakaiRefConfig,
};
use chaos_spde::wick::{brownian_path, GaussianPanel};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / (2 * n) as f64;
    let mut acc = f(a) + f(b);
    for k in 1..2 * n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn heat_semigroup_frozen_value_and_limits() {
    // Closed-form Gaussian convolution at (t, u) = (0.5, 1.2), sigma = 6.
    assert_relative_eq!(heat_semigroup_chi0(1, 6.0, 0.5, &[1.2]), 9.673847848908938, max_relative = 1e-13);
    // t -> 0 recovers the initial bump.
    let problem = SpdeProblem::heat(2, 6.0, 1.0).unwrap();
    let u = [0.4, -1.1];
    assert_relative_eq!(heat_semigroup_chi0(2, 6.0, 0.0, &u), problem.chi0(&u).unwrap(), max_relative = 1e-14);
}

#[test]
fn heat_semigroup_solves_heat_equation() {
    // d/dt S = Laplacian S, checked by central differences in t and u.
    let sigma = 6.0;
    for &(t, u0, u1) in &[(0.3, 0.5, -0.2), (0.7, 1.5, 0.8), (0.1, -2.0, 0.0)] {
        let h = 1e-4;
        let dt = (heat_semigroup_chi0(2, sigma, t + h, &[u0, u1])
            - heat_semigroup_chi0(2, sigma, t - h, &[u0, u1]))
            / (2.0 * h);
        let mut lap = 0.0;
        for l in 0..2 {
            let mut up = [u0, u1];
            let mut dn = [u0, u1];
            up[l] += h;
            dn[l] -= h;
            lap += (heat_semigroup_chi0(2, sigma, t, &up)
                - 2.0 * heat_semigroup_chi0(2, sigma, t, &[u0, u1])
                + heat_semigroup_chi0(2, sigma, t, &dn))
                / (h * h);
        }
        assert_relative_eq!(dt, lap, max_relative = 1e-5);
    }
}

#[test]
fn heat_reference_is_semigroup_plus_noise() {
    let problem = SpdeProblem::heat(1, 6.0, 1.0).unwrap();
    let basis = TimeBasis::new(1.0, 5).unwrap();
    let panel = GaussianPanel::generate(2, 1, 5, 10).unwrap();
    let (t, u) = (0.6, [0.9]);
    for m1 in 0..10 {
        let w = brownian_path(&panel, &basis, &problem.eigenvalues, m1, t).unwrap()[0];
        let want = heat_semigroup_chi0(1, 6.0, t, &u) + w;
        assert_abs_diff_eq!(heat_reference(&problem, &panel, &basis, m1, t, &u).unwrap(), want, epsilon = 1e-13);
    }
}

#[test]
fn chi0_derivatives_match_finite_differences() {
    let problems = [
        SpdeProblem::heat(2, 6.0, 1.0).unwrap(),
        SpdeProblem::hjm(4.0, 4.0, 0.9, 0.5, 1.0).unwrap(),
        SpdeProblem::zakai(2, 0.5).unwrap(),
    ];
    for problem in &problems {
        let m = problem.space_dim;
        let u: Vec<f64> = (0..m).map(|l| 0.3 + 0.4 * l as f64).collect();
        let h = 1e-6;
        for l in 0..m {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[l] += h;
            dn[l] -= h;
            let fd = (problem.chi0(&up).unwrap() - problem.chi0(&dn).unwrap()) / (2.0 * h);
            assert_relative_eq!(problem.chi0_deriv(&u, l).unwrap(), fd, max_relative = 1e-6);
        }
    }
}

#[test]
fn vasicek_rate_starts_at_r0_and_matches_quadrature() {
    let problem = SpdeProblem::hjm(4.0, 4.0, 0.9, 0.5, 1.0).unwrap();
    let basis = TimeBasis::new(1.0, 8).unwrap();
    let panel = GaussianPanel::generate(17, 1, 8, 4).unwrap();
    for m1 in 0..4 {
        assert_abs_diff_eq!(vasicek_rate(&problem, &panel, &basis, m1, 0.0).unwrap(), 4.0, epsilon = 1e-12);
        // Oracle: Simpson quadrature of the exponential-cosine convolution
        // against the reconstructed smooth noise derivative.
        for &t in &[0.3, 0.8] {
            let stoch = simpson(
                |s| {
                    let mut wdot = 0.0;
                    for j in 1..=8 {
                        wdot += panel.xi(m1, 1, j).unwrap() * basis.eval(j, s).unwrap();
                    }
                    (-0.9f64 * (t - s)).exp() * wdot
                },
                0.0,
                t,
                4000,
            );
            let decay = (-0.9f64 * t).exp();
            let want = 4.0 * decay + 4.0 / 0.9 * (1.0 - decay) + 0.5 * stoch;
            assert_relative_eq!(vasicek_rate(&problem, &panel, &basis, m1, t).unwrap(), want, max_relative = 1e-9);
        }
    }
}

#[test]
fn vasicek_moments_match_ou_theory() {
    let (r0, mu, kappa, sigma) = (4.0, 4.0, 0.9, 0.5);
    let problem = SpdeProblem::hjm(r0, mu, kappa, sigma, 1.0).unwrap();
    let j_count = 50;
    let basis = TimeBasis::new(1.0, j_count).unwrap();
    let scenarios = 20_000;
    let panel = GaussianPanel::generate(23, 1, j_count, scenarios).unwrap();
    for &t in &[0.4, 1.0] {
        let (mut mean, mut var) = (0.0, 0.0);
        for m1 in 0..scenarios {
            let r = vasicek_rate(&problem, &panel, &basis, m1, t).unwrap();
            mean += r;
            var += r * r;
        }
        mean /= scenarios as f64;
        var = var / scenarios as f64 - mean * mean;
        let decay = (-kappa * t as f64).exp();
        let want_mean = r0 * decay + mu / kappa * (1.0 - decay);
        let want_var = sigma * sigma / (2.0 * kappa) * (1.0 - decay * decay);
        // Monte-Carlo band plus a small allowance for the J-truncation bias.
        assert!((mean - want_mean).abs() < 0.01, "mean {mean} vs {want_mean}");
        assert!((var - want_var).abs() / want_var < 0.05, "var {var} vs {want_var}");
    }
}

#[test]
fn hjm_forward_frozen_values_and_anchor() {
    let (mu, kappa, sigma) = (4.0, 0.9, 0.5);
    assert_relative_eq!(hjm_forward(3.7, mu, kappa, sigma, 1.1), 4.106882436302909, max_relative = 1e-13);
    assert_relative_eq!(hjm_forward_du(3.7, mu, kappa, sigma, 1.1), 0.18409320139833923, max_relative = 1e-12);
    // u = 0 recovers the short rate.
    for &r in &[2.0, 4.0, 5.5] {
        assert_abs_diff_eq!(hjm_forward(r, mu, kappa, sigma, 0.0), r, epsilon = 1e-13);
    }
    // Space derivative matches finite differences.
    let h = 1e-6;
    let fd = (hjm_forward(3.7, mu, kappa, sigma, 1.1 + h) - hjm_forward(3.7, mu, kappa, sigma, 1.1 - h)) / (2.0 * h);
    assert_relative_eq!(hjm_forward_du(3.7, mu, kappa, sigma, 1.1), fd, max_relative = 1e-8);
}

#[test]
fn hjm_forward_curve_satisfies_the_dynamics() {
    // Pathwise check of dX = (dX/du + f0) dt + sigma e^{-kappa u} dW against
    // the smooth truncated noise, via finite differences in t.
    let (r0, mu, kappa, sigma) = (4.0, 4.0, 0.9, 0.5);
    let problem = SpdeProblem::hjm(r0, mu, kappa, sigma, 1.0).unwrap();
    let basis = TimeBasis::new(1.0, 6).unwrap();
    let panel = GaussianPanel::generate(41, 1, 6, 3).unwrap();
    for m1 in 0..3 {
        for &(t, u) in &[(0.3, 0.0), (0.5, 0.7), (0.8, 1.4)] {
            let h = 1e-5;
            let x = |tt: f64| {
                let r = vasicek_rate(&problem, &panel, &basis, m1, tt).unwrap();
                hjm_forward(r, mu, kappa, sigma, u)
            };
            let lhs = (x(t + h) - x(t - h)) / (2.0 * h);
            let r_t = vasicek_rate(&problem, &panel, &basis, m1, t).unwrap();
            let mut wdot = 0.0;
            for j in 1..=6 {
                wdot += panel.xi(m1, 1, j).unwrap() * basis.eval(j, t).unwrap();
            }
            let rhs = hjm_forward_du(r_t, mu, kappa, sigma, u)
                + problem.drift_f0(t, &[u]).unwrap()
                + sigma * (-kappa * u as f64).exp() * wdot;
            assert_relative_eq!(lhs, rhs, max_relative = 1e-5, epsilon = 1e-7);
        }
    }
}

#[test]
fn hjm_f0_derivative_matches_finite_differences() {
    let problem = SpdeProblem::hjm(4.0, 4.0, 0.9, 0.5, 1.0).unwrap();
    for &u in &[0.0, 0.5, 1.7, 2.9] {
        let h = 1e-6;
        let fd = (problem.drift_f0(0.2, &[u + h]).unwrap() - problem.drift_f0(0.2, &[u - h]).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(problem.drift_f0_deriv(0.2, &[u], 0).unwrap(), fd, epsilon = 1e-8);
    }
}

#[test]
fn hjm_spatial_points_pin_origin_and_match_tilted_density() {
    let problem = SpdeProblem::hjm(4.0, 4.0, 0.9, 0.5, 1.0).unwrap();
    let pts = problem.sample_points(99, 20_000).unwrap();
    assert_eq!(pts[0], 0.0);
    assert!(pts[1..].iter().all(|&u| (0.0..=3.0).contains(&u)));
    // The density is proportional to e^{0.3 u / 3} = e^{0.1 u} on [0, 3]:
    // its mean is int u p(u) du with p the normalized tilt.
    let z = simpson(|u| (0.1 * u as f64).exp(), 0.0, 3.0, 2000);
    let want_mean = simpson(|u| u * (0.1 * u as f64).exp(), 0.0, 3.0, 2000) / z;
    let mean: f64 = pts[1..].iter().sum::<f64>() / (pts.len() - 1) as f64;
    assert!((mean - want_mean).abs() < 0.02, "mean {mean} vs {want_mean}");
}

#[test]
fn gaussian_spatial_points_are_standard_normal() {
    let problem = SpdeProblem::heat(2, 6.0, 1.0).unwrap();
    let pts = problem.sample_points(5, 10_000).unwrap();
    assert_eq!(pts.len(), 20_000);
    let n = pts.len() as f64;
    let mean: f64 = pts.iter().sum::<f64>() / n;
    let var: f64 = pts.iter().map(|x| x * x).sum::<f64>() / n - mean * mean;
    assert!(mean.abs() < 0.02);
    assert!((var - 1.0).abs() < 0.05);
}

#[test]
fn loss_weights_mask_hjm_slots() {
    let hjm = SpdeProblem::hjm(4.0, 4.0, 0.9, 0.5, 1.0).unwrap();
    assert_eq!(hjm.derivative_orders(), vec![None, Some(0)]);
    // Value norm only at the pinned first point, derivative elsewhere.
    assert_eq!(hjm.loss_weight(0, 0), 1.0);
    assert_eq!(hjm.loss_weight(0, 3), 0.0);
    assert_eq!(hjm.loss_weight(1, 0), 0.0);
    assert_eq!(hjm.loss_weight(1, 3), 1.0);
    let heat = SpdeProblem::heat(1, 6.0, 1.0).unwrap();
    assert_eq!(heat.derivative_orders(), vec![None]);
    assert_eq!(heat.loss_weight(0, 7), 1.0);
}

#[test]
fn zakai_generator_action_is_the_adjoint() {
    // A* y = 1/2 sum_{ij} d2_{ij} y - mu' grad y - (div mu) y with
    // sigma sigma' the all-ones matrix. Check the action coefficients by
    // applying them to a quadratic test function against finite differences
    // of the full adjoint expression.
    let problem = SpdeProblem::zakai(2, 0.5).unwrap();
    let y = |u: &[f64]| (0.7 * u[0] - 0.3 * u[1] + 0.2 * u[0] * u[1] + 0.1 * u[0] * u[0]).sin();
    let u = [0.4, -0.8];
    let action = problem.generator_action(&u).unwrap();
    let h = 1e-4;

    // Value of the action applied to y via its coefficients.
    let mut grad_y = [0.0; 2];
    for l in 0..2 {
        let mut up = u;
        let mut dn = u;
        up[l] += h;
        dn[l] -= h;
        grad_y[l] = (y(&up) - y(&dn)) / (2.0 * h);
    }
    let mut got = action.value * y(&u);
    for l in 0..2 {
        got += action.grad[l] * grad_y[l];
    }
    for (coef, v) in &action.quad {
        let up: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let dn: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - h * b).collect();
        got += coef * (y(&up) - 2.0 * y(&u) + y(&dn)) / (h * h);
    }

    // Direct adjoint: sigma sigma' = all ones, mu = 0.25 u / (1 + |u|^2).
    let s = 1.0 + u[0] * u[0] + u[1] * u[1];
    let mu = [0.25 * u[0] / s, 0.25 * u[1] / s];
    let div_mu = 0.25 * (2.0 * s - 2.0 * (s - 1.0)) / (s * s);
    let mut want = -div_mu * y(&u);
    for l in 0..2 {
        want -= mu[l] * grad_y[l];
    }
    let mut hess_sum = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut pp = u;
            let mut pm = u;
            let mut mp = u;
            let mut mm = u;
            pp[i] += h;
            pp[j] += h;
            pm[i] += h;
            pm[j] -= h;
            mp[i] -= h;
            mp[j] += h;
            mm[i] -= h;
            mm[j] -= h;
            hess_sum += (y(&pp) - y(&pm) - y(&mp) + y(&mm)) / (4.0 * h * h);
        }
    }
    want += 0.5 * hess_sum;
    assert_relative_eq!(got, want, max_relative = 1e-4);
}

#[test]
fn zakai_signal_path_is_deterministic_with_gaussian_start() {
    let problem = SpdeProblem::zakai(2, 0.5).unwrap();
    let basis = TimeBasis::new(0.5, 3).unwrap();
    let scenarios = 5_000;
    let panel = GaussianPanel::generate(4, 4, 3, scenarios).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
    let a = zakai_signal_path(&problem, &panel, &basis, 7, &times).unwrap();
    let b = zakai_signal_path(&problem, &panel, &basis, 7, &times).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), times.len());
    // Initial states are standard normal across scenarios.
    let (mut mean, mut var) = (0.0, 0.0);
    for m1 in 0..scenarios {
        let y0 = zakai_signal_path(&problem, &panel, &basis, m1, &times[..2].to_vec()).unwrap()[0][0];
        mean += y0;
        var += y0 * y0;
    }
    mean /= scenarios as f64;
    var = var / scenarios as f64 - mean * mean;
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.07, "var {var}");
}

#[test]
fn particle_density_at_time_zero_matches_chi0() {
    // Weights are one at t = 0, so the estimate is a plain kernel density of
    // standard normal particles.
    let problem = SpdeProblem::zakai(1, 0.5).unwrap();
    let basis = TimeBasis::new(0.5, 3).unwrap();
    let panel = GaussianPanel::generate(6, 2, 3, 2).unwrap();
    let times: Vec<f64> = (0..=5).map(|k| 0.1 * k as f64).collect();
    let cfg = ZakaiRefConfig { particles: 40_000, bandwidth: None, se_threshold: 0.1 };
    let cloud = ZakaiParticleCloud::simulate(&problem, &panel, &basis, 0, &times, &cfg).unwrap();
    for &u in &[-1.0, 0.0, 0.8] {
        let est = cloud.density(0, &[u]).unwrap();
        let want = problem.chi0(&[u]).unwrap();
        assert!((est.value - want).abs() / want < 0.03, "u={u}: {} vs {want}", est.value);
        assert!(!est.flagged);
    }
}

#[test]
fn particle_mass_matches_mean_weight() {
    // The kernel integrates to one, so the spatial integral of the density
    // estimate equals the mean likelihood weight.
    let problem = SpdeProblem::zakai(1, 0.5).unwrap();
    let basis = TimeBasis::new(0.5, 3).unwrap();
    let panel = GaussianPanel::generate(8, 2, 3, 2).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
    let cfg = ZakaiRefConfig { particles: 5_000, bandwidth: None, se_threshold: 0.1 };
    let cloud = ZakaiParticleCloud::simulate(&problem, &panel, &basis, 1, &times, &cfg).unwrap();
    let last = times.len() - 1;
    let integral = simpson(|u| cloud.density(last, &[u]).unwrap().value, -9.0, 9.0, 600);
    assert_relative_eq!(integral, cloud.mean_weight(last), max_relative = 0.01);
    assert!(cloud.mean_weight(0) == 1.0);
}

#[test]
fn particle_estimates_flag_large_standard_errors() {
    let problem = SpdeProblem::zakai(1, 0.5).unwrap();
    let basis = TimeBasis::new(0.5, 3).unwrap();
    let panel = GaussianPanel::generate(6, 2, 3, 1).unwrap();
    let times = vec![0.0, 0.25, 0.5];
    let cfg = ZakaiRefConfig { particles: 200, bandwidth: Some(0.05), se_threshold: 1e-9 };
    let cloud = ZakaiParticleCloud::simulate(&problem, &panel, &basis, 0, &times, &cfg).unwrap();
    let est = cloud.density(2, &[0.3]).unwrap();
    assert!(est.flagged);
    assert!(est.std_error > 0.0);
}

#[test]
fn problem_validation_rejects_nonsense() {
    assert!(SpdeProblem::heat(0, 6.0, 1.0).is_err());
    assert!(SpdeProblem::heat(1, -1.0, 1.0).is_err());
    assert!(SpdeProblem::hjm(4.0, 4.0, 0.0, 0.5, 1.0).is_err());
    assert!(SpdeProblem::zakai(2, 0.0).is_err());
    let heat = SpdeProblem::heat(1, 6.0, 1.0).unwrap();
    assert!(heat.chi0(&[0.0, 0.0]).is_err());
    assert!(heat.diffusion_b0(&[0.0], &[1.0, 2.0]).is_err());
    assert_eq!(heat.noise_dim(), 1);
    let zakai = SpdeProblem::zakai(2, 0.5).unwrap();
    assert_eq!(zakai.noise_dim(), 4);
}

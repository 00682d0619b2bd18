use approx::assert_abs_diff_eq;
use chaos_spde::basis::TimeBasis;
use chaos_spde::wick::{
    brownian_path, enumerate_indices, hermite, index_set_cardinality, wick_eval, GaussianPanel,
    MultiIndex,
};
use proptest::prelude::*;

#[test]
fn hermite_frozen_values() {
    assert_abs_diff_eq!(hermite(0, 1.7), 1.0, epsilon = 0.0);
    assert_abs_diff_eq!(hermite(1, 1.7), 1.7, epsilon = 0.0);
    assert_abs_diff_eq!(hermite(3, 2.0), 2.0, epsilon = 1e-13);
    assert_abs_diff_eq!(hermite(5, 1.3), 1.2429299999999994, epsilon = 1e-12);
    assert_abs_diff_eq!(hermite(8, -0.7), -53.615523989999986, epsilon = 1e-10);
}

#[test]
fn hermite_matches_explicit_polynomials() {
    for &s in &[-2.5, -1.0, -0.3, 0.0, 0.4, 1.1, 2.7] {
        assert_abs_diff_eq!(hermite(2, s), s * s - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hermite(3, s), s * s * s - 3.0 * s, epsilon = 1e-12);
        assert_abs_diff_eq!(hermite(4, s), s.powi(4) - 6.0 * s * s + 3.0, epsilon = 1e-11);
    }
}

proptest! {
    #[test]
    fn hermite_derivative_identity(n in 1u32..10, s in -3.0f64..3.0) {
        // h_n' = n h_{n-1}, checked by central differences.
        let h = 1e-6;
        let fd = (hermite(n, s + h) - hermite(n, s - h)) / (2.0 * h);
        let scale = 1.0 + hermite(n - 1, s).abs();
        prop_assert!((fd - n as f64 * hermite(n - 1, s)).abs() / scale < 1e-6);
    }
}

/// Brute-force index enumeration by an odometer over all degree vectors.
fn brute_force(i_count: usize, j_count: usize, order: u32) -> Vec<Vec<u32>> {
    let slots = i_count * j_count;
    let mut out = Vec::new();
    let mut v = vec![0u32; slots];
    loop {
        if v.iter().sum::<u32>() <= order {
            out.push(v.clone());
        }
        let mut pos = slots;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if v[pos] < order {
                v[pos] += 1;
                for x in v.iter_mut().skip(pos + 1) {
                    *x = 0;
                }
                break;
            }
        }
    }
}

#[test]
fn cardinality_frozen_values() {
    assert_eq!(index_set_cardinality(2, 3, 2).unwrap(), 28);
    assert_eq!(index_set_cardinality(1, 5, 1).unwrap(), 6);
    assert_eq!(index_set_cardinality(1, 5, 3).unwrap(), 56);
    assert_eq!(index_set_cardinality(3, 5, 3).unwrap(), 816);
    assert_eq!(index_set_cardinality(4, 1, 1).unwrap(), 5);
    assert_eq!(index_set_cardinality(2, 2, 3).unwrap(), 35);
    assert_eq!(index_set_cardinality(1, 1, 0).unwrap(), 1);
}

#[test]
fn enumeration_matches_brute_force() {
    for i_count in 1..=3 {
        for j_count in 1..=5 {
            for order in 0..=3 {
                let indices = enumerate_indices(i_count, j_count, order).unwrap();
                let oracle = brute_force(i_count, j_count, order);
                assert_eq!(indices.len() as u128, index_set_cardinality(i_count, j_count, order).unwrap());
                assert_eq!(indices.len(), oracle.len());
                // Same sets: compare flattened degree vectors.
                let mut got: Vec<Vec<u32>> = indices
                    .iter()
                    .map(|alpha| {
                        let mut v = vec![0u32; i_count * j_count];
                        for (i, j, d) in alpha.entries() {
                            v[(i - 1) * j_count + (j - 1)] = d;
                        }
                        v
                    })
                    .collect();
                let mut want = oracle.clone();
                got.sort();
                want.sort();
                assert_eq!(got, want);
            }
        }
    }
}

#[test]
fn enumeration_is_graded_lexicographic() {
    let indices = enumerate_indices(2, 3, 3).unwrap();
    for w in indices.windows(2) {
        assert!(w[0] < w[1], "enumeration must be strictly increasing");
        assert!(w[0].degree() <= w[1].degree());
    }
    assert!(indices[0].is_zero());
}

#[test]
fn multi_index_basics() {
    let alpha = MultiIndex::from_entries([((1, 2), 3), ((2, 1), 1)]).unwrap();
    assert_eq!(alpha.degree(), 4);
    assert_eq!(alpha.factorial().unwrap(), 6);
    assert_eq!(alpha.max_i(), 2);
    assert_eq!(alpha.max_j(), 2);
    assert!(MultiIndex::from_entries([((0, 1), 1)]).is_err());
    assert!(MultiIndex::from_entries([((1, 1), 1), ((1, 1), 2)]).is_err());
    // 21! overflows u64.
    assert!(MultiIndex::from_entries([((1, 1), 21)]).unwrap().factorial().is_err());
    assert_eq!(MultiIndex::unit(1, 3).unwrap().degree(), 1);
}

#[test]
fn panel_is_deterministic_and_standard_normal() {
    let a = GaussianPanel::generate(7, 2, 3, 20_000).unwrap();
    let b = GaussianPanel::generate(7, 2, 3, 20_000).unwrap();
    let c = GaussianPanel::generate(8, 2, 3, 20_000).unwrap();
    assert_eq!(a.xi(123, 2, 3).unwrap(), b.xi(123, 2, 3).unwrap());
    assert_ne!(a.xi(123, 2, 3).unwrap(), c.xi(123, 2, 3).unwrap());
    // A prefix panel agrees with a larger one draw for draw.
    let small = GaussianPanel::generate(7, 2, 3, 10).unwrap();
    assert_eq!(small.xi(5, 1, 2).unwrap(), a.xi(5, 1, 2).unwrap());
    let n = a.scenarios();
    let (mut mean, mut var) = (0.0, 0.0);
    for m in 0..n {
        let x = a.xi(m, 1, 2).unwrap();
        mean += x;
        var += x * x;
    }
    mean /= n as f64;
    var = var / n as f64 - mean * mean;
    assert!(mean.abs() < 0.03, "mean {mean}");
    assert!((var - 1.0).abs() < 0.04, "var {var}");
}

#[test]
fn wick_eval_matches_manual_formula() {
    let panel = GaussianPanel::generate(11, 2, 2, 5).unwrap();
    let alpha = MultiIndex::from_entries([((1, 1), 2), ((2, 2), 1)]).unwrap();
    for m in 0..5 {
        let x = panel.xi(m, 1, 1).unwrap();
        let y = panel.xi(m, 2, 2).unwrap();
        let manual = (x * x - 1.0) * y / 2f64.sqrt();
        assert_abs_diff_eq!(wick_eval(&alpha, &panel, m).unwrap(), manual, epsilon = 1e-13);
    }
    // Zero index is constantly one.
    assert_abs_diff_eq!(wick_eval(&MultiIndex::zero(), &panel, 0).unwrap(), 1.0, epsilon = 0.0);
    // Support outside the panel is rejected.
    let big = MultiIndex::unit(3, 1).unwrap();
    assert!(wick_eval(&big, &panel, 0).is_err());
}

#[test]
fn wick_family_is_approximately_orthonormal() {
    let indices = enumerate_indices(1, 2, 2).unwrap();
    let scenarios = 50_000;
    let panel = GaussianPanel::generate(3, 1, 2, scenarios).unwrap();
    let k = indices.len();
    let mut gram = vec![0.0; k * k];
    for m in 0..scenarios {
        let vals: Vec<f64> = indices.iter().map(|a| wick_eval(a, &panel, m).unwrap()).collect();
        for a in 0..k {
            for b in 0..k {
                gram[a * k + b] += vals[a] * vals[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..k {
            let v = gram[a * k + b] / scenarios as f64;
            let expected = if a == b { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 0.05, "gram[{a}][{b}] = {v}");
        }
    }
}

#[test]
fn brownian_path_variance_matches_parseval_sum() {
    let t_max = 1.0;
    let j_count = 10;
    let basis = TimeBasis::new(t_max, j_count).unwrap();
    let scenarios = 40_000;
    let panel = GaussianPanel::generate(5, 1, j_count, scenarios).unwrap();
    for &t in &[0.25, 0.5, 0.75] {
        let mut expected = 0.0;
        for j in 1..=j_count {
            let v = basis.integral(j, t).unwrap();
            expected += v * v;
        }
        let (mut mean, mut var) = (0.0, 0.0);
        for m in 0..scenarios {
            let w = brownian_path(&panel, &basis, &[1.0], m, t).unwrap()[0];
            mean += w;
            var += w * w;
        }
        mean /= scenarios as f64;
        var = var / scenarios as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - expected).abs() / expected < 0.03, "var {var} vs {expected}");
    }
}

#[test]
fn brownian_path_matches_manual_sum() {
    let basis = TimeBasis::new(2.0, 3).unwrap();
    let panel = GaussianPanel::generate(9, 2, 3, 4).unwrap();
    let lambdas = [1.0, 0.25];
    let t = 1.3;
    let coords = brownian_path(&panel, &basis, &lambdas, 2, t).unwrap();
    for i in 1..=2usize {
        let mut acc = 0.0;
        for j in 1..=3usize {
            acc += panel.xi(2, i, j).unwrap() * basis.integral(j, t).unwrap();
        }
        assert_abs_diff_eq!(coords[i - 1], lambdas[i - 1].sqrt() * acc, epsilon = 1e-14);
    }
}

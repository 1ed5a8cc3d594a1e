mod common;

use common::{normal_matrix, random_spd, rng, uniform, Big};
use proptest::prelude::*;
use sfpp::numerics::{
    cholesky_with_jitter, covariance, gram, logsumexp, nuclear_norm, solve_spd,
    symmetric_eigenvalues,
};
use sfpp::Matrix;

fn naive_covariance(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += x[(i, j)];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
            }
            out[(a, b)] = acc / (n - 1) as f64;
        }
    }
    out
}

#[test]
fn covariance_matches_double_loop() {
    let mut r = rng(11);
    let x = normal_matrix(&mut r, 50, 5, 2.0);
    let fast = covariance(&x).unwrap();
    let slow = naive_covariance(&x);
    for a in 0..5 {
        for b in 0..5 {
            assert!((fast[(a, b)] - slow[(a, b)]).abs() < 1e-12);
        }
    }
}

#[test]
fn covariance_small_cases() {
    let two = covariance(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
    assert_eq!(two.as_slice(), &[0.5, -0.5, -0.5, 0.5]);
    let same = covariance(&Matrix::from_rows(&[[2.0, 3.0], [2.0, 3.0], [2.0, 3.0]]).unwrap()).unwrap();
    assert!(same.as_slice().iter().all(|&v| v == 0.0));
    assert!(covariance(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).is_err());
}

#[test]
fn spd_solve_residual() {
    let mut r = rng(5);
    for _ in 0..20 {
        let a = random_spd(&mut r, 6, 0.5);
        let v: Vec<f64> = (0..6).map(|_| r.normal()).collect();
        let f = cholesky_with_jitter(&a, 0.0).unwrap();
        let x = solve_spd(&f, &v).unwrap();
        let ax = a.mat_vec(&x).unwrap();
        let res: f64 = ax.iter().zip(&v).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = v.iter().map(|q| q * q).sum::<f64>().sqrt();
        assert!(res / norm < 1e-10);
    }
}

#[test]
fn cholesky_reconstructs_regularized_input() {
    let mut r = rng(8);
    for n in [1, 2, 5, 12] {
        let a = random_spd(&mut r, n, 1e-3);
        let f = cholesky_with_jitter(&a, 1e-6).unwrap();
        let mut target = a.clone();
        for i in 0..n {
            target[(i, i)] += f.jitter_used();
        }
        let back = f.reconstruct();
        let diff: f64 = back
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff / target.frobenius_norm() < 1e-8);
        let ld: f64 = 2.0 * f.lower().diag().iter().map(|v| v.ln()).sum::<f64>();
        assert!((ld - f.log_det()).abs() < 1e-12 * ld.abs().max(1.0));
    }
}

#[test]
fn logsumexp_matches_high_precision() {
    let mut big = Big::new();
    let mut r = rng(64);
    for _ in 0..10 {
        let v: Vec<f64> = (0..64).map(|_| uniform(&mut r, -50.0, 50.0)).collect();
        let terms: Vec<_> = v.iter().map(|&x| big.exp(&big.of(x))).collect();
        let total = big.sum(&terms);
        let ln = big.ln(&total);
        let oracle = big.to_f64(&ln);
        let got = logsumexp(&v).unwrap();
        assert!((got - oracle).abs() < 1e-12 * oracle.abs().max(1.0), "{got} vs {oracle}");
    }
}

#[test]
fn logsumexp_edge_values() {
    assert!((logsumexp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert!((logsumexp(&[1000.0, 1000.0]).unwrap() - (1000.0 + 2f64.ln())).abs() < 1e-12);
    assert_eq!(logsumexp(&[-7.25]).unwrap(), -7.25);
    assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(), f64::NEG_INFINITY);
    assert!(logsumexp(&[]).is_err());
    assert!(logsumexp(&[f64::INFINITY]).is_err());
    assert!(logsumexp(&[0.0, f64::NAN]).is_err());
}

/// Roots of the characteristic polynomial of a symmetric 3x3 matrix,
/// located by bisection between Gershgorin bounds.
fn cubic_roots(a: &Matrix) -> Vec<f64> {
    let det = |l: f64| {
        let m = |i: usize, j: usize| a[(i, j)] - if i == j { l } else { 0.0 };
        m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
    };
    let bound = (0..3)
        .map(|i| (0..3).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let steps = 20000;
    let mut roots = Vec::new();
    let mut prev = -bound;
    for k in 1..=steps {
        let x = -bound + 2.0 * bound * k as f64 / steps as f64;
        if det(prev) == 0.0 {
            roots.push(prev);
        } else if det(prev).signum() != det(x).signum() {
            let (mut lo, mut hi) = (prev, x);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if det(lo).signum() == det(mid).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = x;
    }
    roots
}

#[test]
fn nuclear_norm_matches_characteristic_polynomial() {
    let mut r = rng(83);
    for _ in 0..5 {
        let p = normal_matrix(&mut r, 8, 3, 1.0);
        let g = gram(&p);
        let roots = cubic_roots(&g);
        assert_eq!(roots.len(), 3);
        let oracle: f64 = roots.iter().map(|l| l.max(0.0).sqrt()).sum();
        assert!((nuclear_norm(&p).unwrap() - oracle).abs() < 1e-8);
        let mut eig = symmetric_eigenvalues(&g).unwrap();
        eig.sort_by(f64::total_cmp);
        for (e, o) in eig.iter().zip(&roots) {
            assert!((e - o).abs() < 1e-8);
        }
    }
}

#[test]
fn nuclear_norm_simple_cases() {
    assert!((nuclear_norm(&Matrix::identity(3)).unwrap() - 3.0).abs() < 1e-12);
    let (n, c) = (12, 4);
    let mut p = Matrix::zeros(n, c);
    for i in 0..n {
        p[(i, i % c)] = 1.0;
    }
    assert!((nuclear_norm(&p).unwrap() - ((n * c) as f64).sqrt()).abs() < 1e-12);
}

fn small_matrix() -> impl Strategy<Value = Matrix> {
    (2usize..12, 1usize..6).prop_flat_map(|(n, d)| {
        prop::collection::vec(-100.0f64..100.0, n * d)
            .prop_map(move |v| Matrix::from_vec(n, d, v).unwrap())
    })
}

proptest! {
    #[test]
    fn covariance_symmetric_and_psd(x in small_matrix()) {
        let c = covariance(&x).unwrap();
        let d = c.rows();
        for i in 0..d {
            for j in 0..d {
                prop_assert_eq!(c[(i, j)].to_bits(), c[(j, i)].to_bits());
            }
        }
        let scale = c.diag().iter().copied().fold(1.0, f64::max);
        for e in symmetric_eigenvalues(&c).unwrap() {
            prop_assert!(e >= -1e-10 * scale);
        }
    }

    #[test]
    fn solve_recovers_x(seed in any::<u64>(), n in 1usize..9) {
        let mut r = rng(seed);
        let a = random_spd(&mut r, n, 1.0);
        let x: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let v = a.mat_vec(&x).unwrap();
        let got = solve_spd(&cholesky_with_jitter(&a, 0.0).unwrap(), &v).unwrap();
        let err: f64 = got.iter().zip(&x).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|q| q * q).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-9 * norm.max(1e-12));
    }

    #[test]
    fn logsumexp_shift(v in prop::collection::vec(-300.0f64..300.0, 1..40), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let lhs = logsumexp(&shifted).unwrap();
        let rhs = logsumexp(&v).unwrap() + c;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn nuclear_norm_permutation_invariant(seed in any::<u64>(), n in 2usize..10, c in 1usize..6) {
        let mut r = rng(seed);
        let p = normal_matrix(&mut r, n, c, 1.0);
        let base = nuclear_norm(&p).unwrap();
        let rows: Vec<usize> = (0..n).rev().collect();
        let mut cols: Vec<usize> = (0..c).collect();
        cols.rotate_left(1);
        let mut q = Matrix::zeros(n, c);
        for (i, &ri) in rows.iter().enumerate() {
            for (j, &cj) in cols.iter().enumerate() {
                q[(i, j)] = p[(ri, cj)];
            }
        }
        prop_assert!((nuclear_norm(&q).unwrap() - base).abs() < 1e-10 * base.max(1.0));
    }
}

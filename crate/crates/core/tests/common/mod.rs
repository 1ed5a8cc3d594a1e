#![allow(dead_code)]

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use sfpp::bench::XorShift64Star;
use sfpp::Matrix;

pub const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

/// 256-bit arithmetic for reference values.
pub struct Big {
    cc: Consts,
}

impl Big {
    pub fn new() -> Self {
        Big {
            cc: Consts::new().expect("constant cache"),
        }
    }

    pub fn of(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, PREC)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, PREC, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, PREC, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, PREC, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, PREC, RM)
    }

    pub fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(PREC, RM, &mut self.cc)
    }

    pub fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(PREC, RM, &mut self.cc)
    }

    pub fn pi(&mut self) -> BigFloat {
        self.cc.pi(PREC, RM)
    }

    pub fn to_f64(&mut self, a: &BigFloat) -> f64 {
        let s = a.format(Radix::Dec, RM, &mut self.cc).expect("format");
        s.parse().unwrap_or_else(|_| panic!("unparseable big float `{s}`"))
    }

    pub fn sum(&self, values: &[BigFloat]) -> BigFloat {
        values.iter().fold(self.of(0.0), |acc, v| self.add(&acc, v))
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, a: &Matrix, b: &[f64]) -> Vec<BigFloat> {
        let n = a.rows();
        let mut m: Vec<Vec<BigFloat>> = (0..n)
            .map(|i| {
                let mut row: Vec<BigFloat> = a.row(i).iter().map(|&v| self.of(v)).collect();
                row.push(self.of(b[i]));
                row
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| m[x][col].abs_cmp(&m[y][col]).unwrap_or(0).cmp(&0))
                .unwrap();
            m.swap(col, pivot);
            for r in col + 1..n {
                let f = self.div(&m[r][col], &m[col][col]);
                for k in col..=n {
                    let t = self.mul(&f, &m[col][k]);
                    m[r][k] = self.sub(&m[r][k], &t);
                }
            }
        }
        let mut x = vec![self.of(0.0); n];
        for r in (0..n).rev() {
            let mut acc = m[r][n].clone();
            for k in r + 1..n {
                let t = self.mul(&m[r][k], &x[k]);
                acc = self.sub(&acc, &t);
            }
            x[r] = self.div(&acc, &m[r][r]);
        }
        x
    }

    /// `ln det A` for SPD `A` via the same elimination.
    pub fn ln_det(&mut self, a: &Matrix) -> BigFloat {
        let n = a.rows();
        let mut m: Vec<Vec<BigFloat>> = (0..n)
            .map(|i| a.row(i).iter().map(|&v| self.of(v)).collect())
            .collect();
        let mut det = self.of(1.0);
        for col in 0..n {
            for r in col + 1..n {
                let f = self.div(&m[r][col], &m[col][col]);
                for k in col..n {
                    let t = self.mul(&f, &m[col][k]);
                    m[r][k] = self.sub(&m[r][k], &t);
                }
            }
            det = self.mul(&det, &m[col][col]);
        }
        self.ln(&det)
    }

    /// `ln N(x; mu, A)` evaluated densely: full solve, determinant and 2π.
    pub fn log_gaussian(&mut self, a: &Matrix, mu: &[f64], x: &[f64], scale: f64) -> BigFloat {
        let n = mu.len();
        let diff: Vec<f64> = x.iter().zip(mu).map(|(p, q)| p - q).collect();
        let diff_big: Vec<BigFloat> = x
            .iter()
            .zip(mu)
            .map(|(p, q)| self.sub(&self.of(*p), &self.of(*q)))
            .collect();
        let y = self.solve(a, &diff);
        let quad = self.sum(
            &diff_big
                .iter()
                .zip(&y)
                .map(|(d, v)| self.mul(d, v))
                .collect::<Vec<_>>(),
        );
        let ln_det = self.ln_det(a);
        let pi = self.pi();
        let two_pi = self.mul(&self.of(2.0), &pi);
        let ln_2pi = self.ln(&two_pi);
        let c_ln_2pi = self.mul(&self.of(n as f64), &ln_2pi);
        let scaled = self.mul(&self.of(scale), &quad);
        let total = self.add(&self.add(&ln_det, &c_ln_2pi), &scaled);
        self.mul(&self.of(-0.5), &total)
    }
}

pub fn rng(seed: u64) -> XorShift64Star {
    XorShift64Star::new(seed)
}

pub fn uniform(r: &mut XorShift64Star, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.next_f64()
}

pub fn normal_matrix(r: &mut XorShift64Star, rows: usize, cols: usize, sd: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| sd * r.normal()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// `B Bᵀ + shift · I` for a random `B`.
pub fn random_spd(r: &mut XorShift64Star, n: usize, shift: f64) -> Matrix {
    let b = normal_matrix(r, n, n, 1.0);
    let mut a = b.matmul(&b.transpose()).unwrap();
    for i in 0..n {
        a[(i, i)] += shift;
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Logits drawn around `C` well-separated centres, `n` rows.
pub fn clustered_logits(r: &mut XorShift64Star, n: usize, c: usize, spread: f64, noise: f64) -> Matrix {
    let mut data = Vec::with_capacity(n * c);
    for k in 0..n {
        let y = k % c;
        for j in 0..c {
            let centre = if j == y { spread } else { 0.0 };
            data.push(centre + noise * r.normal());
        }
    }
    Matrix::from_vec(n, c, data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

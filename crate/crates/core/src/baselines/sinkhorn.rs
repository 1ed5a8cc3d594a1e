//! Entropic optimal transport between two discrete measures.
//!
//! The solver alternates an exact Sinkhorn update of the first potential
//! with a Newton step on the second (Sinkhorn-Newton on the semi-dual).
//! The Newton system has the size of the second measure, which is small
//! for transport onto class vertices, and converges quadratically where
//! plain Sinkhorn at small `epsilon` crawls.

use crate::error::{Error, Result};
use crate::numerics::{cholesky_with_jitter, compensated_sum, dot, logsumexp, solve_spd, Matrix};

const ARMIJO: f64 = 1e-4;
/// Marginal violation below which Newton steps replace plain Sinkhorn updates.
const NEWTON_SWITCH: f64 = 0.2;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    /// L1 violation of the second marginal at which iterations stop.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 1e-2,
            max_iterations: 1000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    /// `Σ_ij π_ij c_ij` of the entropic plan (the entropy term is not added).
    pub cost: f64,
    pub plan: Matrix,
    pub iterations: usize,
    pub marginal_violation: f64,
}

/// Plan rows `π_i = a_i softmax((g - c_i) / ε)` with the first marginal
/// matched exactly, plus the semi-dual objective `<b, g> - ε Σ a_i lse_i`.
struct SemiDual {
    plan: Matrix,
    objective: f64,
}

fn semi_dual(a: &[f64], b: &[f64], cost: &Matrix, g: &[f64], eps: f64) -> Result<SemiDual> {
    let (n, m) = cost.shape();
    let mut plan = Matrix::zeros(n, m);
    let mut scratch = vec![0.0; m];
    let mut lse_terms = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..m {
            scratch[j] = (g[j] - cost[(i, j)]) / eps;
        }
        let lse = logsumexp(&scratch)?;
        lse_terms.push(a[i] * lse);
        let row = plan.row_mut(i);
        for j in 0..m {
            row[j] = a[i] * (scratch[j] - lse).exp();
        }
    }
    let objective = dot(b, g) - eps * compensated_sum(lse_terms);
    Ok(SemiDual { plan, objective })
}

fn column_mass(plan: &Matrix) -> Vec<f64> {
    let (n, m) = plan.shape();
    (0..m)
        .map(|j| compensated_sum((0..n).map(|i| plan[(i, j)])))
        .collect()
}

/// Solves `min <π, C> - ε H(π)` subject to `π 1 = a`, `π^T 1 = b`.
///
/// Both weight vectors must be non-negative and sum to the same total.
pub fn sinkhorn(
    a: &[f64],
    b: &[f64],
    cost: &Matrix,
    config: &SinkhornConfig,
) -> Result<TransportSolution> {
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            found: a.len() * b.len(),
        });
    }
    if a.iter().chain(b).any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidInput("transport weights must be non-negative".into()));
    }
    let eps = config.epsilon;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }

    let (lo, hi) = cost
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let max_step = (hi - lo).max(eps);
    let mut g = vec![0.0; m];
    let mut state = semi_dual(a, b, cost, &g, eps)?;
    let mut violation = f64::INFINITY;
    let mut last_step = 1.0f64;
    for iteration in 0..=config.max_iterations {
        let mass = column_mass(&state.plan);
        let gradient: Vec<f64> = b.iter().zip(&mass).map(|(bj, cj)| bj - cj).collect();
        violation = compensated_sum(gradient.iter().map(|v| v.abs()));
        if !violation.is_finite() {
            return Err(Error::Numerical("Sinkhorn potentials diverged".into()));
        }
        if violation < config.tolerance {
            let total = compensated_sum(
                (0..n * m).map(|k| state.plan.as_slice()[k] * cost.as_slice()[k]),
            );
            return Ok(TransportSolution {
                cost: total,
                plan: state.plan,
                iterations: iteration,
                marginal_violation: violation,
            });
        }
        if iteration == config.max_iterations {
            break;
        }

        if violation > NEWTON_SWITCH {
            for (gj, (bj, cj)) in g.iter_mut().zip(b.iter().zip(&mass)) {
                *gj += eps * (bj.ln() - cj.ln());
            }
            state = semi_dual(a, b, cost, &g, eps)?;
            continue;
        }

        // Negative Hessian of the semi-dual, (diag(mass) - Σ_i π_i π_iᵀ / a_i) / ε,
        // assembled as a graph Laplacian so that near-saturated rows keep their
        // small but decisive curvature. The last potential is pinned.
        let free = m - 1;
        let mut hessian = Matrix::zeros(free, free);
        let mut coupling = vec![0.0; m];
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            let row = state.plan.row(i);
            for j in 0..free {
                let w = row[j] / a[i];
                if w == 0.0 {
                    continue;
                }
                for k in 0..m {
                    if k != j {
                        coupling[k] = w * row[k];
                    }
                }
                for k in 0..m {
                    if k == j {
                        continue;
                    }
                    hessian[(j, j)] += coupling[k];
                    if k < free {
                        hessian[(j, k)] -= coupling[k];
                    }
                }
            }
        }
        for j in 0..free {
            for k in 0..j {
                let avg = 0.5 * (hessian[(j, k)] + hessian[(k, j)]);
                hessian[(j, k)] = avg;
                hessian[(k, j)] = avg;
            }
        }
        let factor = cholesky_with_jitter(&hessian.scaled(1.0 / eps), 1e-12)?;
        let mut step = solve_spd(&factor, &gradient[..free])?;
        step.push(0.0);
        let longest = step.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if longest > max_step {
            for v in &mut step {
                *v *= max_step / longest;
            }
        }
        let slope = dot(&gradient, &step);

        let mut t = (2.0 * last_step).min(1.0);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = g.iter().zip(&step).map(|(gj, dj)| gj + t * dj).collect();
            let next = semi_dual(a, b, cost, &trial, eps)?;
            if next.objective >= state.objective + ARMIJO * t * slope {
                accepted = Some((trial, next));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                last_step = t;
                g = trial;
                state = next;
            }
            None => {
                let mass = column_mass(&state.plan);
                for (gj, (bj, cj)) in g.iter_mut().zip(b.iter().zip(&mass)) {
                    *gj += eps * (bj.ln() - cj.ln());
                }
                state = semi_dual(a, b, cost, &g, eps)?;
                last_step = 1.0;
            }
        }
    }
    Err(Error::NoConvergence {
        what: "Sinkhorn",
        iterations: config.max_iterations,
        residual: violation,
    })
}

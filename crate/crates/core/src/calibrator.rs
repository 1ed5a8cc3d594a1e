//! Unsupervised calibration of target logits with a shared-covariance
//! Gaussian model.
//!
//! Target logits are grouped by their raw argmax. Each group mean becomes a
//! class centre (classes that never win the argmax keep a zero centre), one
//! covariance is estimated from all target logits, and each class prior is
//! the reciprocal of how likely its centre is under the other classes'
//! Gaussians. Posteriors then follow from Bayes' rule in log space.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::DatasetBundle;
use crate::numerics::{
    cholesky_with_jitter, compensated_sum, covariance, logsumexp, mahalanobis_sq, CholeskyFactor,
    Matrix,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the calibrated log-posterior is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosteriorMode {
    /// Bayes quotient with target-estimated means, priors and covariance.
    #[default]
    Bayes,
    /// Three-term product expression evaluated as written, then
    /// renormalized over classes.
    Literal,
}

impl FromStr for PosteriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(PosteriorMode::Bayes),
            "literal" => Ok(PosteriorMode::Literal),
            other => Err(Error::InvalidInput(format!(
                "unknown mode `{other}` (expected bayes or literal)"
            ))),
        }
    }
}

impl fmt::Display for PosteriorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosteriorMode::Bayes => "bayes",
            PosteriorMode::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratorConfig {
    pub mode: PosteriorMode,
    /// Base diagonal jitter, relative to the mean covariance diagonal.
    pub cov_jitter: f64,
    /// Above this many classes the inverse covariance is rescaled to unit
    /// Frobenius norm.
    pub normalize_threshold: usize,
}

impl Default for CalibratorConfig {
    fn default() -> Self {
        CalibratorConfig {
            mode: PosteriorMode::Bayes,
            cov_jitter: 1e-6,
            normalize_threshold: 32,
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of the logits.
pub fn pseudo_labels(logits: &Matrix) -> Vec<usize> {
    logits.row_iter().map(argmax).collect()
}

/// `ln N(x; mu, Σ)` with the quadratic form multiplied by `sigma_inv_scale`.
pub fn log_gaussian(
    factor: &CholeskyFactor,
    mu: &[f64],
    x: &[f64],
    sigma_inv_scale: f64,
) -> Result<f64> {
    if mu.len() != factor.dim() {
        return Err(Error::DimensionMismatch {
            expected: factor.dim(),
            found: mu.len(),
        });
    }
    let m2 = mahalanobis_sq(factor, x, mu)?;
    Ok(-0.5 * (factor.log_det() + mu.len() as f64 * LN_2PI + sigma_inv_scale * m2))
}

/// Fitted generative calibrator. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    means: Matrix,
    log_priors: Vec<f64>,
    covariance: Matrix,
    covariance_factor: CholeskyFactor,
    represented: Vec<bool>,
    sigma_inv_scale: f64,
    /// `[i][j] = ln N(mu_i; mu_j, Σ)`.
    centre_log_density: Matrix,
    /// Row `i` is `L^{-1} mu_i` for the Cholesky factor `L` of `Σ`.
    whitened_means: Matrix,
}

impl GaussianModel {
    /// Fits means, covariance and priors to the target logits.
    pub fn fit(logits: &Matrix, config: &CalibratorConfig) -> Result<Self> {
        let (n, c) = logits.shape();
        if n < 2 {
            return Err(Error::Degenerate(format!(
                "calibration needs at least 2 target samples, got {n}"
            )));
        }
        let labels = pseudo_labels(logits);
        let mut means = Matrix::zeros(c, c);
        let mut represented = vec![false; c];
        for class in 0..c {
            let members: Vec<usize> = (0..n).filter(|&k| labels[k] == class).collect();
            if members.is_empty() {
                continue;
            }
            represented[class] = true;
            let count = members.len() as f64;
            for j in 0..c {
                means[(class, j)] = compensated_sum(members.iter().map(|&k| logits[(k, j)])) / count;
            }
        }

        let cov = covariance(logits)?;
        let factor = cholesky_with_jitter(&cov, config.cov_jitter)?;
        let sigma_inv_scale = if c > config.normalize_threshold {
            let norm = factor.inverse().frobenius_norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "inverse covariance has Frobenius norm {norm}"
                )));
            }
            1.0 / norm
        } else {
            1.0
        };
        Self::assemble(means, None, cov, factor, represented, sigma_inv_scale)
    }

    /// Builds a model from explicit parameters. When `log_priors` is `None`
    /// they are derived from the means as in [`GaussianModel::fit`].
    pub fn from_parts(
        means: Matrix,
        log_priors: Option<Vec<f64>>,
        covariance: Matrix,
        base_jitter: f64,
        sigma_inv_scale: f64,
    ) -> Result<Self> {
        let c = means.rows();
        if means.cols() != c || covariance.shape() != (c, c) {
            return Err(Error::InvalidInput(format!(
                "means must be C x C and covariance C x C, got {:?} and {:?}",
                means.shape(),
                covariance.shape()
            )));
        }
        if !(sigma_inv_scale > 0.0) || !sigma_inv_scale.is_finite() {
            return Err(Error::InvalidInput("sigma_inv_scale must be positive".into()));
        }
        let factor = cholesky_with_jitter(&covariance, base_jitter)?;
        let represented = vec![true; c];
        Self::assemble(means, log_priors, covariance, factor, represented, sigma_inv_scale)
    }

    fn assemble(
        means: Matrix,
        log_priors: Option<Vec<f64>>,
        covariance: Matrix,
        factor: CholeskyFactor,
        represented: Vec<bool>,
        sigma_inv_scale: f64,
    ) -> Result<Self> {
        let c = means.rows();
        let mut whitened_means = Matrix::zeros(c, c);
        for i in 0..c {
            let w = factor.forward_solve(means.row(i))?;
            whitened_means.row_mut(i).copy_from_slice(&w);
        }
        let normalizer = factor.log_det() + c as f64 * LN_2PI;
        let mut centre_log_density = Matrix::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                let m2 = squared_distance(whitened_means.row(i), whitened_means.row(j));
                centre_log_density[(i, j)] = -0.5 * (normalizer + sigma_inv_scale * m2);
            }
        }
        let log_priors = match log_priors {
            Some(p) => {
                if p.len() != c || p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(
                        "log_priors must be C finite values".into(),
                    ));
                }
                p
            }
            None => (0..c)
                .map(|i| {
                    let others: Vec<f64> = (0..c)
                        .filter(|&j| j != i)
                        .map(|j| centre_log_density[(i, j)])
                        .collect();
                    logsumexp(&others).map(|v| -v)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if let Some(i) = log_priors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("log prior of class {i} is not finite")));
        }
        Ok(GaussianModel {
            means,
            log_priors,
            covariance,
            covariance_factor: factor,
            represented,
            sigma_inv_scale,
            centre_log_density,
            whitened_means,
        })
    }

    pub fn class_count(&self) -> usize {
        self.means.rows()
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn log_priors(&self) -> &[f64] {
        &self.log_priors
    }

    /// Unregularized covariance as estimated (or supplied).
    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn covariance_factor(&self) -> &CholeskyFactor {
        &self.covariance_factor
    }

    pub fn represented(&self) -> &[bool] {
        &self.represented
    }

    pub fn sigma_inv_scale(&self) -> f64 {
        self.sigma_inv_scale
    }

    /// Same model with every log prior shifted by `offset`.
    pub fn with_prior_offset(&self, offset: f64) -> Self {
        let mut out = self.clone();
        out.log_priors.iter_mut().for_each(|p| *p += offset);
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.class_count() {
            return Err(Error::DimensionMismatch {
                expected: self.class_count(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite logit".into()));
        }
        Ok(())
    }

    /// Squared Mahalanobis distance from `x` to every class mean.
    fn mahalanobis_to_means(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let y = self.covariance_factor.forward_solve(x)?;
        Ok(self
            .whitened_means
            .row_iter()
            .map(|w| squared_distance(&y, w))
            .collect())
    }

    /// Unnormalized class scores `-½ s M²_i + ln p(c_i)`; the shared Gaussian
    /// normalizer is dropped.
    pub fn class_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m2 = self.mahalanobis_to_means(x)?;
        Ok(m2
            .iter()
            .zip(&self.log_priors)
            .map(|(d, p)| -0.5 * self.sigma_inv_scale * d + p)
            .collect())
    }

    /// Calibrated `ln p(c_i | x)` for one logit vector.
    pub fn log_posterior(&self, x: &[f64], mode: PosteriorMode) -> Result<Vec<f64>> {
        let scores = match mode {
            PosteriorMode::Bayes => self.class_scores(x)?,
            PosteriorMode::Literal => self.literal_terms(x)?,
        };
        let norm = logsumexp(&scores)?;
        let out: Vec<f64> = scores.iter().map(|a| a - norm).collect();
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("NaN in calibrated log-posterior".into()));
        }
        Ok(out)
    }

    /// Calibrated posterior probabilities for one logit vector.
    pub fn posterior(&self, x: &[f64], mode: PosteriorMode) -> Result<Vec<f64>> {
        let lp = self.log_posterior(x, mode)?;
        Ok(normalize_exp(&lp))
    }

    /// The three-term expression: own-class log density, minus the log of
    /// the other Gaussians' density at the class centre, minus the log of
    /// the double sum `Σ_j Σ_{i≠j} N(x; mu_j) N(mu_j; mu_i)`.
    fn literal_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.class_count();
        let normalizer = self.covariance_factor.log_det() + c as f64 * LN_2PI;
        let own: Vec<f64> = self
            .mahalanobis_to_means(x)?
            .iter()
            .map(|d| -0.5 * (normalizer + self.sigma_inv_scale * d))
            .collect();
        let mut pair_terms = Vec::with_capacity(c * (c - 1));
        for j in 0..c {
            for i in 0..c {
                if i != j {
                    pair_terms.push(own[j] + self.centre_log_density[(j, i)]);
                }
            }
        }
        let joint = logsumexp(&pair_terms)?;
        // ln p(c_i) = -ln Σ_{j≠i} N(mu_i; mu_j)
        Ok((0..c).map(|i| own[i] + self.log_priors[i] - joint).collect())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `exp` of a log-distribution, renormalized to sum to one.
pub fn normalize_exp(log_p: &[f64]) -> Vec<f64> {
    let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
    let total = compensated_sum(p.iter().copied());
    p.into_iter().map(|v| v / total).collect()
}

/// Per-sample calibrated posteriors for a whole target set.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedOutput {
    pub log_posteriors: Matrix,
    pub posteriors: Matrix,
}

/// Maps every row of `logits` through the model in parallel; row order is
/// preserved.
pub fn posteriors_for(
    model: &GaussianModel,
    logits: &Matrix,
    mode: PosteriorMode,
) -> Result<CalibratedOutput> {
    let (n, c) = logits.shape();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| model.log_posterior(logits.row(k), mode))
        .collect::<Result<_>>()?;
    let mut log_posteriors = Vec::with_capacity(n * c);
    let mut posteriors = Vec::with_capacity(n * c);
    for row in &rows {
        log_posteriors.extend_from_slice(row);
        posteriors.extend(normalize_exp(row));
    }
    Ok(CalibratedOutput {
        log_posteriors: Matrix::from_vec(n, c, log_posteriors)?,
        posteriors: Matrix::from_vec(n, c, posteriors)?,
    })
}

/// Fits the model on the bundle's target logits and calibrates them.
pub fn calibrate(bundle: &DatasetBundle, config: &CalibratorConfig) -> Result<CalibratedOutput> {
    let model = GaussianModel::fit(bundle.target_logits(), config)?;
    posteriors_for(&model, bundle.target_logits(), config.mode)
}

//! Gradient-norm correctness rule on calibrated posteriors.
//!
//! For each target sample two cross-entropy losses are formed against the
//! calibrated posterior `s`: one toward the one-hot pseudo-label at
//! `argmax(s)` and one toward the uniform distribution. The sample counts
//! as correctly predicted when the last-layer gradient of the pseudo-label
//! loss is strictly smaller than that of the uniform loss.

use std::time::Instant;

use rayon::prelude::*;

use crate::calibrator::{argmax, pseudo_labels, CalibratorConfig, GaussianModel, PosteriorMode};
use crate::error::{Error, Result};
use crate::ingest::{DatasetBundle, EstimateReport, PseudoLabelLog};
use crate::numerics::{norm2, solve_spd};

pub const METHOD_ID: &str = "calibrated-gradnorm";

const DISTRIBUTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorConfig {
    pub calibrator: CalibratorConfig,
    /// Count samples whose uniform-loss gradient is the smaller one instead.
    pub eq5_literal: bool,
}

/// Per-sample outcome of the gradient-norm comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub sample_index: usize,
    pub grad_norm_pl: f64,
    pub grad_norm_uniform: f64,
    pub correct: bool,
}

/// Gradient norms toward the pseudo-label and toward uniform, plus the
/// pseudo-label itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradNormPair {
    pub pseudo_label: usize,
    pub pl: f64,
    pub uniform: f64,
}

fn check_distribution(target: &[f64], c: usize) -> Result<()> {
    if target.len() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            found: target.len(),
        });
    }
    let total: f64 = target.iter().sum();
    if target.iter().any(|&t| !(t >= 0.0)) || (total - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InvalidInput(format!(
            "target is not a probability distribution (sum {total})"
        )));
    }
    Ok(())
}

/// Cross-entropy `-Σ target_i ln p(c_i | x)` under the calibrated model.
pub fn cross_entropy(
    model: &GaussianModel,
    x: &[f64],
    target: &[f64],
    mode: PosteriorMode,
) -> Result<f64> {
    let lp = model.log_posterior(x, mode)?;
    Ok(-target
        .iter()
        .zip(&lp)
        .map(|(t, l)| if *t == 0.0 { 0.0 } else { t * l })
        .sum::<f64>())
}

/// `∂ L_CE / ∂ z` for the calibrated model.
///
/// In bayes mode each class score is `-½ s (z - mu_i)^T Σ⁻¹ (z - mu_i) +
/// ln p(c_i)`, so the gradient is `s Σ⁻¹ Σ_i (p_i - target_i) mu_i` (the
/// `z` terms cancel because both distributions sum to one). Literal mode
/// uses central differences with step `1e-5 (1 + |z_j|)`.
pub fn grad_wrt_logits(
    model: &GaussianModel,
    x: &[f64],
    target: &[f64],
    mode: PosteriorMode,
) -> Result<Vec<f64>> {
    let c = model.class_count();
    check_distribution(target, c)?;
    match mode {
        PosteriorMode::Bayes => {
            let p = model.posterior(x, mode)?;
            let mut weighted = vec![0.0; c];
            for (i, (pi, ti)) in p.iter().zip(target).enumerate() {
                let w = pi - ti;
                if w == 0.0 {
                    continue;
                }
                for (acc, mu) in weighted.iter_mut().zip(model.means().row(i)) {
                    *acc += w * mu;
                }
            }
            let mut g = solve_spd(model.covariance_factor(), &weighted)?;
            let s = model.sigma_inv_scale();
            g.iter_mut().for_each(|v| *v *= s);
            Ok(g)
        }
        PosteriorMode::Literal => {
            let mut z = x.to_vec();
            let mut g = vec![0.0; c];
            for j in 0..c {
                let h = 1e-5 * (1.0 + x[j].abs());
                z[j] = x[j] + h;
                let up = cross_entropy(model, &z, target, mode)?;
                z[j] = x[j] - h;
                let down = cross_entropy(model, &z, target, mode)?;
                z[j] = x[j];
                g[j] = (up - down) / (2.0 * h);
            }
            Ok(g)
        }
    }
}

/// Gradient norms for the pseudo-label and uniform targets.
///
/// With penultimate features available the norms are those of the full
/// `[W, b]` gradient, `‖g‖ · sqrt(‖feature‖² + 1)`; the common factor
/// never changes which of the two is smaller.
pub fn grad_norm_pair(
    model: &GaussianModel,
    x: &[f64],
    feature_norm: Option<f64>,
    mode: PosteriorMode,
) -> Result<GradNormPair> {
    let c = model.class_count();
    let factor = match feature_norm {
        None => 1.0,
        Some(f) if f >= 0.0 && f.is_finite() => (f * f + 1.0).sqrt(),
        Some(f) => {
            return Err(Error::InvalidInput(format!(
                "feature norm must be finite and non-negative, got {f}"
            )))
        }
    };
    let s = model.posterior(x, mode)?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("degenerate calibrated posterior".into()));
    }
    let k = argmax(&s);
    let mut one_hot = vec![0.0; c];
    one_hot[k] = 1.0;
    let uniform = vec![1.0 / c as f64; c];
    let g_pl = grad_wrt_logits(model, x, &one_hot, mode)?;
    let g_u = grad_wrt_logits(model, x, &uniform, mode)?;
    Ok(GradNormPair {
        pseudo_label: k,
        pl: norm2(&g_pl) * factor,
        uniform: norm2(&g_u) * factor,
    })
}

/// Strict comparison; equal norms are judged incorrect.
pub fn judge(sample_index: usize, pair: &GradNormPair, eq5_literal: bool) -> Verdict {
    let correct = if eq5_literal {
        pair.uniform < pair.pl
    } else {
        pair.pl < pair.uniform
    };
    Verdict {
        sample_index,
        grad_norm_pl: pair.pl,
        grad_norm_uniform: pair.uniform,
        correct,
    }
}

/// Fits the calibrator on the target logits, judges every sample and
/// reports the fraction judged correct.
pub fn predict_accuracy(bundle: &DatasetBundle, config: &EstimatorConfig) -> Result<EstimateReport> {
    let start = Instant::now();
    let logits = bundle.target_logits();
    let n = logits.rows();
    let mode = config.calibrator.mode;
    let model = GaussianModel::fit(logits, &config.calibrator)?;
    let feature_norms: Option<Vec<f64>> = bundle
        .target_features()
        .map(|f| f.row_iter().map(norm2).collect());

    let pairs: Vec<GradNormPair> = (0..n)
        .into_par_iter()
        .map(|k| {
            let fnorm = feature_norms.as_ref().map(|v| v[k]);
            grad_norm_pair(&model, logits.row(k), fnorm, mode)
        })
        .collect::<Result<_>>()?;
    let verdicts: Vec<Verdict> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| judge(k, p, config.eq5_literal))
        .collect();
    let correct = verdicts.iter().filter(|v| v.correct).count();

    let mut report = EstimateReport::new(METHOD_ID, correct as f64 / n as f64, n)
        .with_config("mode", mode)
        .with_config("eq5_literal", config.eq5_literal)
        .with_config("cov_jitter", config.calibrator.cov_jitter)
        .with_config("normalize_threshold", config.calibrator.normalize_threshold)
        .with_config("jitter_used", model.covariance_factor().jitter_used())
        .with_config("sigma_inv_scale", model.sigma_inv_scale())
        .with_config("feature_scaled", feature_norms.is_some());
    report.per_sample_correct = Some(verdicts.iter().map(|v| v.correct).collect());
    report.grad_norm_pairs = Some(
        verdicts
            .iter()
            .map(|v| (v.grad_norm_pl, v.grad_norm_uniform))
            .collect(),
    );
    report.pseudo_labels = Some(PseudoLabelLog {
        raw: pseudo_labels(logits),
        calibrated: pairs.iter().map(|p| p.pseudo_label).collect(),
    });
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

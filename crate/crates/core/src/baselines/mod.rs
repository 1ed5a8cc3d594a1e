//! Reference accuracy estimators sharing the bundle/report contract.
//!
//! Source-free: `ac`, `nuclear`, `gradnorm`. Source-based (need labeled
//! validation logits): `atc-prob`, `atc-entropy`, `atc-energy`, `doc`, `cot`.

mod sinkhorn;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::calibrator::argmax;
use crate::error::{Error, Result};
use crate::estimator::{judge, GradNormPair};
use crate::ingest::{DatasetBundle, EstimateReport};
use crate::numerics::{compensated_sum, logsumexp, norm2, nuclear_norm, Matrix};

pub use sinkhorn::{sinkhorn, SinkhornConfig, TransportSolution};

/// Row-softmax of `logits / temperature`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput {
    pub probabilities: Matrix,
    pub temperature: f64,
}

pub fn softmax_row(z: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    let norm = logsumexp(&scaled).expect("finite logits");
    scaled.iter().map(|v| (v - norm).exp()).collect()
}

pub fn softmax(logits: &Matrix, temperature: f64) -> Result<SoftmaxOutput> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut data = Vec::with_capacity(logits.rows() * logits.cols());
    for row in logits.row_iter() {
        data.extend(softmax_row(row, temperature));
    }
    Ok(SoftmaxOutput {
        probabilities: Matrix::from_vec(logits.rows(), logits.cols(), data)?,
        temperature,
    })
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

fn max_prob(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    compensated_sum(v.iter().copied()) / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ac,
    Nuclear,
    GradNorm,
    AtcProb,
    AtcEntropy,
    AtcEnergy,
    Doc,
    Cot,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ac,
        Method::Nuclear,
        Method::GradNorm,
        Method::AtcProb,
        Method::AtcEntropy,
        Method::AtcEnergy,
        Method::Doc,
        Method::Cot,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Ac => "ac",
            Method::Nuclear => "nuclear",
            Method::GradNorm => "gradnorm",
            Method::AtcProb => "atc-prob",
            Method::AtcEntropy => "atc-entropy",
            Method::AtcEnergy => "atc-energy",
            Method::Doc => "doc",
            Method::Cot => "cot",
        }
    }

    /// Whether the method consumes labeled validation data.
    pub fn is_source_based(self) -> bool {
        matches!(
            self,
            Method::AtcProb | Method::AtcEntropy | Method::AtcEnergy | Method::Doc | Method::Cot
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown baseline method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    /// Softmax temperature used by `gradnorm`.
    pub temperature: f64,
    /// Temperature of the free-energy score used by `atc-energy`.
    pub energy_temperature: f64,
    pub sinkhorn: SinkhornConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            temperature: 1.0,
            energy_temperature: 1.0,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

/// Runs one baseline by id and stamps the elapsed time.
pub fn run(method: Method, bundle: &DatasetBundle, config: &BaselineConfig) -> Result<EstimateReport> {
    let start = Instant::now();
    let mut report = match method {
        Method::Ac => ac(bundle),
        Method::Nuclear => nuclear_norm_score(bundle),
        Method::GradNorm => gradnorm(bundle, config.temperature),
        Method::AtcProb => atc(bundle, AtcScore::MaxProb, config.energy_temperature),
        Method::AtcEntropy => atc(bundle, AtcScore::NegEntropy, config.energy_temperature),
        Method::AtcEnergy => atc(bundle, AtcScore::Energy, config.energy_temperature),
        Method::Doc => doc(bundle),
        Method::Cot => cot(bundle, &config.sinkhorn),
    }?;
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Average max-softmax confidence.
pub fn ac(bundle: &DatasetBundle) -> Result<EstimateReport> {
    let p = softmax(bundle.target_logits(), 1.0)?.probabilities;
    let acc = mean(p.row_iter().map(max_prob));
    Ok(EstimateReport::new(Method::Ac.id(), acc, bundle.n_target()))
}

/// Nuclear norm of the softmax matrix over `sqrt(n C)`, which maps balanced
/// one-hot predictions to 1 and uniform predictions to `1/C`.
pub fn nuclear_norm_score(bundle: &DatasetBundle) -> Result<EstimateReport> {
    let p = softmax(bundle.target_logits(), 1.0)?.probabilities;
    let (n, c) = p.shape();
    let score = nuclear_norm(&p)? / ((n * c) as f64).sqrt();
    Ok(EstimateReport::new(
        Method::Nuclear.id(),
        score.clamp(0.0, 1.0),
        n,
    ))
}

/// Gradient-norm rule on plain temperature-scaled softmax outputs, where
/// the logit gradient of the cross-entropy is `s - target`.
pub fn gradnorm(bundle: &DatasetBundle, temperature: f64) -> Result<EstimateReport> {
    let p = softmax(bundle.target_logits(), temperature)?.probabilities;
    let (n, c) = p.shape();
    let uniform = 1.0 / c as f64;
    let mut correct = Vec::with_capacity(n);
    let mut pairs = Vec::with_capacity(n);
    for (k, s) in p.row_iter().enumerate() {
        let top = argmax(s);
        let g_pl: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(i, v)| v - if i == top { 1.0 } else { 0.0 })
            .collect();
        let g_u: Vec<f64> = s.iter().map(|v| v - uniform).collect();
        let pair = GradNormPair {
            pseudo_label: top,
            pl: norm2(&g_pl),
            uniform: norm2(&g_u),
        };
        let verdict = judge(k, &pair, false);
        correct.push(verdict.correct);
        pairs.push((pair.pl, pair.uniform));
    }
    let hits = correct.iter().filter(|&&c| c).count();
    let mut report = EstimateReport::new(Method::GradNorm.id(), hits as f64 / n as f64, n)
        .with_config("temperature", temperature);
    report.per_sample_correct = Some(correct);
    report.grad_norm_pairs = Some(pairs);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtcScore {
    MaxProb,
    NegEntropy,
    /// `T · logsumexp(z / T)`, the negative free energy.
    Energy,
}

impl AtcScore {
    fn method(self) -> Method {
        match self {
            AtcScore::MaxProb => Method::AtcProb,
            AtcScore::NegEntropy => Method::AtcEntropy,
            AtcScore::Energy => Method::AtcEnergy,
        }
    }

    pub fn score(self, z: &[f64], energy_temperature: f64) -> f64 {
        match self {
            AtcScore::MaxProb => max_prob(&softmax_row(z, 1.0)),
            AtcScore::NegEntropy => -entropy(&softmax_row(z, 1.0)),
            AtcScore::Energy => {
                let scaled: Vec<f64> = z.iter().map(|v| v / energy_temperature).collect();
                energy_temperature * logsumexp(&scaled).expect("finite logits")
            }
        }
    }
}

fn validation(bundle: &DatasetBundle, method: Method) -> Result<(&Matrix, &[usize])> {
    match (bundle.val_logits(), bundle.val_labels()) {
        (Some(l), Some(y)) if l.rows() > 0 => Ok((l, y)),
        _ => Err(Error::MissingValidation {
            method: method.id().to_string(),
        }),
    }
}

fn validation_accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let hits = logits
        .row_iter()
        .zip(labels)
        .filter(|(z, &y)| argmax(z) == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn fraction_above(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

/// Threshold `t` such that the fraction of validation scores strictly above
/// `t` is closest to `accuracy`.
///
/// Candidates are every validation score plus one just below the minimum;
/// ties go to the smaller threshold.
pub fn fit_atc_threshold(val_scores: &[f64], accuracy: f64) -> f64 {
    let mut sorted = val_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let below = sorted[0].next_down();
    let n = sorted.len();
    let mut best = (below, (1.0 - accuracy).abs());
    for &t in &sorted {
        let above = n - sorted.partition_point(|&s| s <= t);
        let gap = (above as f64 / n as f64 - accuracy).abs();
        if gap < best.1 {
            best = (t, gap);
        }
    }
    best.0
}

/// Average thresholded confidence.
pub fn atc(bundle: &DatasetBundle, score: AtcScore, energy_temperature: f64) -> Result<EstimateReport> {
    let method = score.method();
    let (val_logits, val_labels) = validation(bundle, method)?;
    if score == AtcScore::Energy && !(energy_temperature > 0.0) {
        return Err(Error::InvalidInput("energy temperature must be positive".into()));
    }
    let val_scores: Vec<f64> = val_logits
        .row_iter()
        .map(|z| score.score(z, energy_temperature))
        .collect();
    let accuracy = validation_accuracy(val_logits, val_labels);
    let threshold = fit_atc_threshold(&val_scores, accuracy);
    let target_scores: Vec<f64> = bundle
        .target_logits()
        .row_iter()
        .map(|z| score.score(z, energy_temperature))
        .collect();
    let mut report = EstimateReport::new(
        method.id(),
        fraction_above(&target_scores, threshold),
        bundle.n_target(),
    )
    .with_config("threshold", threshold)
    .with_config("val_accuracy", accuracy)
    .with_config("n_val", val_labels.len());
    if score == AtcScore::Energy {
        report = report.with_config("energy_temperature", energy_temperature);
    }
    Ok(report)
}

/// Difference of confidences between validation and target.
pub fn doc(bundle: &DatasetBundle) -> Result<EstimateReport> {
    let (val_logits, val_labels) = validation(bundle, Method::Doc)?;
    let accuracy = validation_accuracy(val_logits, val_labels);
    let val_conf = mean(softmax(val_logits, 1.0)?.probabilities.row_iter().map(max_prob));
    let target_conf = mean(
        softmax(bundle.target_logits(), 1.0)?
            .probabilities
            .row_iter()
            .map(max_prob),
    );
    let predicted = (accuracy - (val_conf - target_conf)).clamp(0.0, 1.0);
    Ok(EstimateReport::new(Method::Doc.id(), predicted, bundle.n_target())
        .with_config("val_accuracy", accuracy)
        .with_config("n_val", val_labels.len()))
}

/// Transport cost between the target softmax rows and the validation label
/// distribution placed on the simplex vertices; predicted accuracy is one
/// minus that cost.
pub fn cot(bundle: &DatasetBundle, config: &SinkhornConfig) -> Result<EstimateReport> {
    let (_, val_labels) = validation(bundle, Method::Cot)?;
    let p = softmax(bundle.target_logits(), 1.0)?.probabilities;
    let c = p.cols();
    let mut histogram = vec![0usize; c];
    for &y in val_labels {
        histogram[y] += 1;
    }
    let classes: Vec<usize> = (0..c).filter(|&k| histogram[k] > 0).collect();
    let b: Vec<f64> = classes
        .iter()
        .map(|&k| histogram[k] as f64 / val_labels.len() as f64)
        .collect();
    let a = vec![1.0 / p.rows() as f64; p.rows()];
    let cost = label_cost(&p, &classes);
    let solution = sinkhorn(&a, &b, &cost, config)?;
    Ok(EstimateReport::new(
        Method::Cot.id(),
        (1.0 - solution.cost).clamp(0.0, 1.0),
        bundle.n_target(),
    )
    .with_config("transport_cost", solution.cost)
    .with_config("sinkhorn_iterations", solution.iterations)
    .with_config("epsilon", config.epsilon))
}

/// `½ ‖p_i - e_y‖₁` for every prediction row `i` and class vertex `y`.
pub fn label_cost(p: &Matrix, classes: &[usize]) -> Matrix {
    let mut cost = Matrix::zeros(p.rows(), classes.len());
    for i in 0..p.rows() {
        for (j, &y) in classes.iter().enumerate() {
            let l1: f64 = p
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, v)| (v - if k == y { 1.0 } else { 0.0 }).abs())
                .sum();
            cost[(i, j)] = 0.5 * l1;
        }
    }
    cost
}

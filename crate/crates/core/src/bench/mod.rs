//! Synthetic distribution-shift benchmark.
//!
//! Each scenario draws Gaussian class clusters, trains a multinomial
//! logistic regression on a source split, and shifts a target split by a
//! common mean offset, a variance inflation and a skewed label prior. The
//! trained model's logits feed every estimator; held-back target labels
//! give the ground-truth accuracy.

mod rng;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig, Method};
use crate::calibrator::argmax;
use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorConfig};
use crate::ingest::DatasetBundle;
use crate::numerics::{compensated_sum, logsumexp, Matrix};

pub use rng::{splitmix64, XorShift64Star};

const STREAM_CENTRES: u64 = 1;
const STREAM_SHIFT: u64 = 2;
const STREAM_SOURCE: u64 = 3;
const STREAM_VALIDATION: u64 = 4;
const STREAM_TARGET: u64 = 5;
const STREAM_SUBSAMPLE: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// Length of the offset added to every target sample.
    pub mean_shift: f64,
    /// Multiplier on the within-class variance of the target.
    pub cov_scale: f64,
    /// Target label prior is `∝ exp(-skew · k / (C - 1))`.
    pub prior_skew: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            mean_shift: 0.0,
            cov_scale: 1.0,
            prior_skew: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            learning_rate: 0.5,
            iterations: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchScenario {
    pub name: String,
    pub seed: u64,
    pub class_count: usize,
    pub feature_dim: usize,
    pub n_source: usize,
    pub n_val: usize,
    pub n_target: usize,
    /// Expected norm of each class centre.
    pub class_separation: f64,
    #[serde(default)]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub classifier: ClassifierSpec,
}

impl BenchScenario {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("scenario `{}`: {what}", self.name)));
        if self.class_count < 2 {
            return bad("class_count must be at least 2");
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be at least 1");
        }
        if self.n_source < 1 || self.n_target < 2 {
            return bad("need at least 1 source and 2 target samples");
        }
        if !(self.shift.cov_scale > 0.0) || !self.shift.mean_shift.is_finite() {
            return bad("cov_scale must be positive and mean_shift finite");
        }
        if !self.shift.prior_skew.is_finite() || !self.class_separation.is_finite() {
            return bad("prior_skew and class_separation must be finite");
        }
        if !(self.classifier.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Features with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub source: LabeledSet,
    pub validation: LabeledSet,
    pub target: LabeledSet,
}

fn draw_split(
    rng: &mut XorShift64Star,
    n: usize,
    centres: &Matrix,
    prior: &[f64],
    offset: &[f64],
    noise_sd: f64,
) -> LabeledSet {
    let d = centres.cols();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.categorical(prior);
        for j in 0..d {
            data.push(centres[(y, j)] + offset[j] + noise_sd * rng.normal());
        }
        labels.push(y);
    }
    LabeledSet {
        features: Matrix::from_vec(n, d, data).expect("finite draws"),
        labels,
    }
}

/// Draws source, validation and (shifted) target splits.
pub fn generate(scenario: &BenchScenario) -> Result<SyntheticData> {
    scenario.validate()?;
    let (c, d) = (scenario.class_count, scenario.feature_dim);

    let mut rng = XorShift64Star::derive(scenario.seed, &[STREAM_CENTRES]);
    let spread = scenario.class_separation / (d as f64).sqrt();
    let mut centres = Matrix::zeros(c, d);
    for k in 0..c {
        for j in 0..d {
            centres[(k, j)] = spread * rng.normal();
        }
    }

    let mut rng = XorShift64Star::derive(scenario.seed, &[STREAM_SHIFT]);
    let direction: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let offset: Vec<f64> = direction
        .iter()
        .map(|v| scenario.shift.mean_shift * v / norm)
        .collect();

    let uniform = vec![1.0; c];
    let skewed: Vec<f64> = (0..c)
        .map(|k| (-scenario.shift.prior_skew * k as f64 / (c - 1) as f64).exp())
        .collect();
    let zero = vec![0.0; d];

    let mut rng = XorShift64Star::derive(scenario.seed, &[STREAM_SOURCE]);
    let source = draw_split(&mut rng, scenario.n_source, &centres, &uniform, &zero, 1.0);
    let mut rng = XorShift64Star::derive(scenario.seed, &[STREAM_VALIDATION]);
    let validation = draw_split(&mut rng, scenario.n_val, &centres, &uniform, &zero, 1.0);
    let mut rng = XorShift64Star::derive(scenario.seed, &[STREAM_TARGET]);
    let target = draw_split(
        &mut rng,
        scenario.n_target,
        &centres,
        &skewed,
        &offset,
        scenario.shift.cov_scale.sqrt(),
    );
    Ok(SyntheticData {
        source,
        validation,
        target,
    })
}

/// Last linear layer `z = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn logits(&self, features: &Matrix) -> Matrix {
        let (n, c) = (features.rows(), self.weights.rows());
        let mut out = Matrix::zeros(n, c);
        for i in 0..n {
            let x = features.row(i);
            for k in 0..c {
                out[(i, k)] = crate::numerics::dot(self.weights.row(k), x) + self.bias[k];
            }
        }
        out
    }

    pub fn accuracy(&self, set: &LabeledSet) -> f64 {
        let logits = self.logits(&set.features);
        let hits = logits
            .row_iter()
            .zip(&set.labels)
            .filter(|(z, &y)| argmax(z) == y)
            .count();
        hits as f64 / set.labels.len() as f64
    }
}

/// Mean cross-entropy of a linear classifier on a labeled set.
pub fn training_loss(model: &LinearClassifier, set: &LabeledSet) -> f64 {
    let logits = model.logits(&set.features);
    let losses = logits
        .row_iter()
        .zip(&set.labels)
        .map(|(z, &y)| logsumexp(z).expect("finite logits") - z[y]);
    compensated_sum(losses) / set.labels.len() as f64
}

/// Full-batch gradient descent on the mean cross-entropy from a zero
/// initialization. Returns the model and the loss before each step plus
/// the final loss.
pub fn train_classifier_with_history(
    source: &LabeledSet,
    class_count: usize,
    spec: &ClassifierSpec,
) -> (LinearClassifier, Vec<f64>) {
    let (n, d) = source.features.shape();
    let mut model = LinearClassifier {
        weights: Matrix::zeros(class_count, d),
        bias: vec![0.0; class_count],
    };
    let mut history = Vec::with_capacity(spec.iterations + 1);
    let scale = spec.learning_rate / n as f64;
    for _ in 0..spec.iterations {
        let logits = model.logits(&source.features);
        let mut grad_w = Matrix::zeros(class_count, d);
        let mut grad_b = vec![0.0; class_count];
        let mut loss = Vec::with_capacity(n);
        for i in 0..n {
            let z = logits.row(i);
            let lse = logsumexp(z).expect("finite logits");
            let y = source.labels[i];
            loss.push(lse - z[y]);
            let x = source.features.row(i);
            for k in 0..class_count {
                let r = (z[k] - lse).exp() - if k == y { 1.0 } else { 0.0 };
                grad_b[k] += r;
                for (g, xv) in grad_w.row_mut(k).iter_mut().zip(x) {
                    *g += r * xv;
                }
            }
        }
        history.push(compensated_sum(loss) / n as f64);
        for k in 0..class_count {
            model.bias[k] -= scale * grad_b[k];
            let gw = grad_w.row(k).to_vec();
            for (w, g) in model.weights.row_mut(k).iter_mut().zip(gw) {
                *w -= scale * g;
            }
        }
    }
    history.push(training_loss(&model, source));
    (model, history)
}

pub fn train_classifier(source: &LabeledSet, class_count: usize, spec: &ClassifierSpec) -> LinearClassifier {
    train_classifier_with_history(source, class_count, spec).0
}

/// Estimator selectable in a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Calibrated,
    Baseline(Method),
}

impl BenchMethod {
    pub fn all() -> Vec<BenchMethod> {
        std::iter::once(BenchMethod::Calibrated)
            .chain(Method::ALL.into_iter().map(BenchMethod::Baseline))
            .collect()
    }

    pub fn id(self) -> &'static str {
        match self {
            BenchMethod::Calibrated => estimator::METHOD_ID,
            BenchMethod::Baseline(m) => m.id(),
        }
    }

    pub fn is_source_based(self) -> bool {
        matches!(self, BenchMethod::Baseline(m) if m.is_source_based())
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == estimator::METHOD_ID {
            Ok(BenchMethod::Calibrated)
        } else {
            s.parse().map(BenchMethod::Baseline)
        }
    }

    fn predict(self, bundle: &DatasetBundle, config: &SuiteConfig) -> Result<f64> {
        let report = match self {
            BenchMethod::Calibrated => estimator::predict_accuracy(bundle, &config.estimator)?,
            BenchMethod::Baseline(m) => baselines::run(m, bundle, &config.baselines)?,
        };
        Ok(report.predicted_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub methods: Vec<BenchMethod>,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub baselines: BaselineConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            methods: BenchMethod::all(),
            ratios: vec![0.01, 0.05, 0.1, 1.0],
            trials: 20,
            seed: 0,
            estimator: EstimatorConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

/// One absolute error; `ae` is `None` when the method could not run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub scenario: String,
    pub method: String,
    pub ratio: f64,
    pub trial: usize,
    pub predicted: Option<f64>,
    pub ae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub true_accuracy: f64,
    pub source_accuracy: f64,
}

/// AE statistics of one method at one inclusion ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub ratio: f64,
    /// Mean over scenarios of the per-scenario mean AE.
    pub mae: Option<f64>,
    /// Mean over scenarios of the across-trial AE standard deviation.
    pub ae_std: Option<f64>,
    /// Per-scenario mean AE, in scenario order.
    pub scenario_ae: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaeTable {
    pub seed: u64,
    pub trials: usize,
    pub ratios: Vec<f64>,
    pub scenarios: Vec<ScenarioSummary>,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<TrialRecord>,
}

impl MaeTable {
    pub fn summary(&self, method: &str, ratio: f64) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.ratio == ratio)
    }

    /// MAE at the largest inclusion ratio.
    pub fn mae(&self, method: &str) -> Option<f64> {
        let top = self.ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.summary(method, top).and_then(|s| s.mae)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    /// Plot-friendly rows: `scenario,method,ratio,trial,ae`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,method,ratio,trial,ae\n");
        for r in &self.records {
            let ae = r.ae.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scenario, r.method, r.ratio, r.trial, ae
            ));
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("mae_table.json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("mae_table.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Order-independent mean: values are sorted before the compensated sum.
fn stable_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    compensated_sum(v) / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    let m = stable_mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    stable_mean(&sq).sqrt()
}

/// Everything one scenario contributes to the table.
struct ScenarioRun {
    summary: ScenarioSummary,
    /// `[method][ratio][trial]`
    results: Vec<Vec<Vec<std::result::Result<f64, String>>>>,
}

/// Generates, trains and evaluates a single scenario.
pub fn scenario_bundle(scenario: &BenchScenario) -> Result<(DatasetBundle, ScenarioSummary, SyntheticData, LinearClassifier)> {
    let data = generate(scenario)?;
    let model = train_classifier(&data.source, scenario.class_count, &scenario.classifier);
    let target_logits = model.logits(&data.target.features);
    let val_logits = model.logits(&data.validation.features);
    let mut builder = DatasetBundle::builder(target_logits)
        .features(data.target.features.clone())
        .weights(model.weights.clone())
        .bias(model.bias.clone());
    if scenario.n_val > 0 {
        builder = builder.validation(
            val_logits,
            data.validation.labels.iter().map(|&l| l as i64).collect(),
        );
    }
    let bundle = builder.build()?;
    let summary = ScenarioSummary {
        scenario: scenario.name.clone(),
        true_accuracy: model.accuracy(&data.target),
        source_accuracy: model.accuracy(&data.source),
    };
    Ok((bundle, summary, data, model))
}

fn run_scenario(scenario: &BenchScenario, config: &SuiteConfig) -> Result<ScenarioRun> {
    let (bundle, summary, _, _) = scenario_bundle(scenario)?;
    let n_val = scenario.n_val;
    let mut results = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let mut per_ratio = Vec::with_capacity(config.ratios.len());
        if !method.is_source_based() {
            let outcome = method.predict(&bundle, config).map_err(|e| e.to_string());
            for _ in &config.ratios {
                per_ratio.push(vec![outcome.clone(); config.trials]);
            }
        } else {
            for (ri, &ratio) in config.ratios.iter().enumerate() {
                let k = (ratio * n_val as f64).round() as usize;
                if k >= 2 && k == n_val {
                    let outcome = method.predict(&bundle, config).map_err(|e| e.to_string());
                    per_ratio.push(vec![outcome; config.trials]);
                    continue;
                }
                let trials = (0..config.trials)
                    .map(|t| {
                        if k < 2 {
                            return Err(format!("{k} validation samples at ratio {ratio}"));
                        }
                        let mut rng = XorShift64Star::derive(
                            config.seed,
                            &[STREAM_SUBSAMPLE, scenario.seed, ri as u64, t as u64],
                        );
                        let subset = rng.sample_indices(n_val, k);
                        bundle
                            .with_validation_subset(&subset)
                            .and_then(|b| method.predict(&b, config))
                            .map_err(|e| e.to_string())
                    })
                    .collect();
                per_ratio.push(trials);
            }
        }
        results.push(per_ratio);
    }
    Ok(ScenarioRun { summary, results })
}

/// Runs every method on every scenario and aggregates absolute errors.
///
/// Scenarios are evaluated in parallel; the table does not depend on the
/// number of worker threads.
pub fn run_suite(scenarios: &[BenchScenario], config: &SuiteConfig) -> Result<MaeTable> {
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("empty scenario suite".into()));
    }
    if config.trials == 0 || config.ratios.is_empty() {
        return Err(Error::InvalidInput("need at least one trial and one ratio".into()));
    }
    if let Some(r) = config.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::InvalidInput(format!("inclusion ratio {r} outside (0, 1]")));
    }
    let runs: Vec<ScenarioRun> = scenarios
        .par_iter()
        .map(|s| run_scenario(s, config))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (mi, method) in config.methods.iter().enumerate() {
        for (ri, &ratio) in config.ratios.iter().enumerate() {
            let mut scenario_ae = Vec::with_capacity(runs.len());
            let mut scenario_std = Vec::with_capacity(runs.len());
            for run in &runs {
                let truth = run.summary.true_accuracy;
                let mut aes = Vec::new();
                for (t, outcome) in run.results[mi][ri].iter().enumerate() {
                    let (predicted, ae, unavailable) = match outcome {
                        Ok(p) => (Some(*p), Some((p - truth).abs()), None),
                        Err(e) => (None, None, Some(e.clone())),
                    };
                    if let Some(ae) = ae {
                        aes.push(ae);
                    }
                    records.push(TrialRecord {
                        scenario: run.summary.scenario.clone(),
                        method: method.id().to_string(),
                        ratio,
                        trial: t,
                        predicted,
                        ae,
                        unavailable,
                    });
                }
                if aes.is_empty() {
                    scenario_ae.push(None);
                } else {
                    scenario_ae.push(Some(stable_mean(&aes)));
                    scenario_std.push(std_dev(&aes));
                }
            }
            let available: Vec<f64> = scenario_ae.iter().flatten().copied().collect();
            let complete = available.len() == runs.len();
            summaries.push(MethodSummary {
                method: method.id().to_string(),
                ratio,
                mae: complete.then(|| stable_mean(&available)),
                ae_std: complete.then(|| stable_mean(&scenario_std)),
                scenario_ae,
            });
        }
    }
    Ok(MaeTable {
        seed: config.seed,
        trials: config.trials,
        ratios: config.ratios.clone(),
        scenarios: runs.into_iter().map(|r| r.summary).collect(),
        summaries,
        records,
    })
}

/// The built-in 20-scenario suite, varying class count, shift magnitude,
/// variance inflation and label-prior skew. `seed` offsets every scenario
/// seed.
pub fn default_suite(seed: u64) -> Vec<BenchScenario> {
    let class_counts = [10usize, 12, 15, 20];
    let shifts = [
        (0.0, 1.0, 0.0),
        (1.5, 1.0, 0.0),
        (3.0, 1.5, 0.5),
        (4.5, 2.0, 1.0),
        (6.0, 3.0, 2.0),
    ];
    let mut suite = Vec::with_capacity(20);
    for (ci, &c) in class_counts.iter().enumerate() {
        for (si, &(mean_shift, cov_scale, prior_skew)) in shifts.iter().enumerate() {
            let index = (ci * shifts.len() + si) as u64;
            suite.push(BenchScenario {
                name: format!("c{c}-shift{si}"),
                seed: seed.wrapping_mul(1000).wrapping_add(index),
                class_count: c,
                feature_dim: 16,
                n_source: 2000,
                n_val: 500,
                n_target: 1000,
                class_separation: 6.0,
                shift: ShiftSpec {
                    mean_shift,
                    cov_scale,
                    prior_skew,
                },
                classifier: ClassifierSpec {
                    learning_rate: 2.0,
                    iterations: 1000,
                },
            });
        }
    }
    suite
}

/// Reads a JSON array of scenarios.
pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<BenchScenario>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let suite: Vec<BenchScenario> = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    for s in &suite {
        s.validate()?;
    }
    Ok(suite)
}

mod common;

use common::{clustered_logits, normal_matrix, random_spd, rng};
use proptest::prelude::*;
use sfpp::bench::{scenario_bundle, BenchScenario, ClassifierSpec, ShiftSpec};
use sfpp::calibrator::{CalibratorConfig, GaussianModel, PosteriorMode};
use sfpp::estimator::{
    cross_entropy, grad_norm_pair, grad_wrt_logits, judge, predict_accuracy, EstimatorConfig,
};
use sfpp::{DatasetBundle, Matrix};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_instance(seed: u64) -> (GaussianModel, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let c = 2 + r.below(7);
    let means = normal_matrix(&mut r, c, c, 1.5);
    let sigma = random_spd(&mut r, c, 0.5);
    let model = GaussianModel::from_parts(means, None, sigma, 0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..c).map(|_| 2.0 * r.normal()).collect();
    let raw: Vec<f64> = (0..c).map(|_| r.next_f64() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    let target = raw.iter().map(|v| v / total).collect();
    (model, x, target)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..100 {
        let (model, x, target) = random_instance(seed);
        let g = grad_wrt_logits(&model, &x, &target, PosteriorMode::Bayes).unwrap();
        let mut fd = vec![0.0; x.len()];
        let mut z = x.clone();
        for j in 0..x.len() {
            let h = 1e-5 * (1.0 + x[j].abs());
            z[j] = x[j] + h;
            let up = cross_entropy(&model, &z, &target, PosteriorMode::Bayes).unwrap();
            z[j] = x[j] - h;
            let down = cross_entropy(&model, &z, &target, PosteriorMode::Bayes).unwrap();
            z[j] = x[j];
            fd[j] = (up - down) / (2.0 * h);
        }
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-5 * norm(&fd).max(1e-8), "seed {seed}: {g:?} vs {fd:?}");
    }
}

#[test]
fn literal_gradient_agrees_with_bayes() {
    for seed in 0..20 {
        let (model, x, target) = random_instance(seed);
        let a = grad_wrt_logits(&model, &x, &target, PosteriorMode::Bayes).unwrap();
        let b = grad_wrt_logits(&model, &x, &target, PosteriorMode::Literal).unwrap();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&diff) <= 1e-5 * norm(&a).max(1e-8));
    }
}

#[test]
fn full_layer_norm_verdicts_match_logit_space() {
    for seed in 0..100 {
        let (model, z, _) = random_instance(1000 + seed);
        let mut r = rng(seed);
        let d = 1 + r.below(10);
        let feature: Vec<f64> = (0..d).map(|_| r.normal()).collect();
        assert!(norm(&feature) > 0.0);
        let plain = grad_norm_pair(&model, &z, None, PosteriorMode::Bayes).unwrap();
        let scaled = grad_norm_pair(&model, &z, Some(norm(&feature)), PosteriorMode::Bayes).unwrap();

        let c = z.len();
        let s = model.posterior(&z, PosteriorMode::Bayes).unwrap();
        let mut one_hot = vec![0.0; c];
        one_hot[plain.pseudo_label] = 1.0;
        let uniform = vec![1.0 / c as f64; c];
        let full_norm = |target: &[f64]| {
            let g = grad_wrt_logits(&model, &z, target, PosteriorMode::Bayes).unwrap();
            let mut sq = 0.0;
            for gi in &g {
                for xj in feature.iter().chain(std::iter::once(&1.0)) {
                    sq += (gi * xj) * (gi * xj);
                }
            }
            sq.sqrt()
        };
        let explicit_correct = full_norm(&one_hot) < full_norm(&uniform);
        assert_eq!(sfpp::calibrator::argmax(&s), plain.pseudo_label);
        assert_eq!(judge(0, &plain, false).correct, explicit_correct, "seed {seed}");
        assert_eq!(judge(0, &scaled, false).correct, explicit_correct, "seed {seed}");
    }
}

#[test]
fn softmax_style_judge_examples() {
    use sfpp::estimator::GradNormPair;
    let sq2 = 2f64.sqrt();
    let pair = |pl: f64, u: f64| GradNormPair { pseudo_label: 0, pl, uniform: u };
    assert!(judge(0, &pair(0.01 * sq2, 0.49 * sq2), false).correct);
    assert!(!judge(0, &pair(0.5 * sq2, 0.0), false).correct);
    assert!(!judge(0, &pair(0.25 * sq2, 0.25 * sq2), false).correct);
    assert!(judge(0, &pair(0.5 * sq2, 0.0), true).correct);
}

#[test]
fn confident_clusters_predict_full_accuracy() {
    let mut r = rng(2);
    let logits = clustered_logits(&mut r, 300, 3, 40.0, 0.5);
    let report = predict_accuracy(&DatasetBundle::from_logits(logits).unwrap(), &EstimatorConfig::default()).unwrap();
    assert_eq!(report.predicted_accuracy, 1.0);
}

#[test]
fn uniform_posteriors_predict_zero() {
    let model = GaussianModel::from_parts(Matrix::identity(3), Some(vec![0.0; 3]), Matrix::identity(3), 0.0, 1.0).unwrap();
    for t in [0.0, 0.5, -3.0] {
        let x = [t, t, t];
        let s = model.posterior(&x, PosteriorMode::Bayes).unwrap();
        assert!(s.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let pair = grad_norm_pair(&model, &x, None, PosteriorMode::Bayes).unwrap();
        assert!(pair.uniform < 1e-12 && pair.pl > 0.5);
        assert!(!judge(0, &pair, false).correct);
    }
}

#[test]
fn report_is_consistent() {
    let mut r = rng(31);
    let logits = clustered_logits(&mut r, 200, 4, 2.0, 1.0);
    let report = predict_accuracy(&DatasetBundle::from_logits(logits.clone()).unwrap(), &EstimatorConfig::default()).unwrap();
    let verdicts = report.per_sample_correct.as_ref().unwrap();
    let hits = verdicts.iter().filter(|&&v| v).count();
    assert_eq!(report.predicted_accuracy, hits as f64 / 200.0);
    let pairs = report.grad_norm_pairs.as_ref().unwrap();
    for (v, (pl, u)) in verdicts.iter().zip(pairs) {
        assert_eq!(*v, pl < u);
    }
    let logs = report.pseudo_labels.as_ref().unwrap();
    assert_eq!(logs.raw, sfpp::calibrator::pseudo_labels(&logits));

    let flipped = predict_accuracy(
        &DatasetBundle::from_logits(logits).unwrap(),
        &EstimatorConfig { eq5_literal: true, ..Default::default() },
    )
    .unwrap();
    for ((a, b), (pl, u)) in verdicts.iter().zip(flipped.per_sample_correct.as_ref().unwrap()).zip(pairs) {
        if pl != u {
            assert_ne!(a, b);
        }
    }
}

#[test]
fn extreme_logits_stay_finite() {
    for c in [62usize, 64] {
        let mut r = rng(c as u64);
        let mut logits = clustered_logits(&mut r, 4 * c, c, 3.0, 1.0);
        for i in 0..logits.rows() {
            for v in logits.row_mut(i) {
                *v *= 1e3;
            }
        }
        let report = predict_accuracy(&DatasetBundle::from_logits(logits).unwrap(), &EstimatorConfig::default()).unwrap();
        assert!(report.predicted_accuracy.is_finite());
        assert!(report.grad_norm_pairs.unwrap().iter().all(|(a, b)| a.is_finite() && b.is_finite()));
    }
}

#[test]
fn separated_two_class_scenario_tracks_ground_truth() {
    let scenario = BenchScenario {
        name: "two-class".into(),
        seed: 1,
        class_count: 2,
        feature_dim: 4,
        n_source: 500,
        n_val: 100,
        n_target: 500,
        class_separation: 10.0,
        shift: ShiftSpec { mean_shift: 1.0, cov_scale: 1.5, prior_skew: 0.0 },
        classifier: ClassifierSpec::default(),
    };
    let (bundle, summary, _, _) = scenario_bundle(&scenario).unwrap();
    let report = predict_accuracy(&bundle, &EstimatorConfig::default()).unwrap();
    assert!((report.predicted_accuracy - summary.true_accuracy).abs() < 0.10);
    assert_eq!(report.config_echo["feature_scaled"], "true");
}

#[test]
fn target_must_be_a_distribution() {
    let (model, x, _) = random_instance(4);
    let c = x.len();
    assert!(grad_wrt_logits(&model, &x, &vec![1.0; c], PosteriorMode::Bayes).is_err());
    assert!(grad_wrt_logits(&model, &x, &[1.0], PosteriorMode::Bayes).is_err());
    assert!(grad_norm_pair(&model, &x, Some(f64::NAN), PosteriorMode::Bayes).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sample_order_does_not_matter(seed in any::<u64>(), c in 2usize..6, n in 8usize..80) {
        let mut r = rng(seed);
        let logits = clustered_logits(&mut r, n, c, 2.0, 1.0);
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                p.swap(i, r.below(i + 1));
            }
            p
        };
        let shuffled = logits.select_rows(&perm);
        let cfg = EstimatorConfig { calibrator: CalibratorConfig::default(), eq5_literal: false };
        let a = predict_accuracy(&DatasetBundle::from_logits(logits).unwrap(), &cfg).unwrap();
        let b = predict_accuracy(&DatasetBundle::from_logits(shuffled).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a.predicted_accuracy, b.predicted_accuracy);
        let va = a.per_sample_correct.unwrap();
        let vb = b.per_sample_correct.unwrap();
        for (k, &src) in perm.iter().enumerate() {
            prop_assert_eq!(va[src], vb[k]);
        }
    }
}

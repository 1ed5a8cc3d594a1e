use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sfpp::ingest::{write_array, write_matrix};
use sfpp::{Matrix, NdArray};

fn sfpp(args: &[&str]) -> Output {
    sfpp_env(args, &[])
}

fn sfpp_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfpp"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn matrix_file(dir: &Path, name: &str, rows: &[&[f64]]) -> String {
    let path = dir.join(name);
    write_matrix(&path, &Matrix::from_rows(rows).unwrap()).unwrap();
    path.display().to_string()
}

fn path_str(p: PathBuf) -> String {
    p.display().to_string()
}

#[test]
fn predict_on_two_samples() {
    let dir = tempfile::tempdir().unwrap();
    let logits = matrix_file(dir.path(), "z.npy", &[&[1.0, 0.0], &[0.0, 1.0]]);
    let report = path_str(dir.path().join("r.json"));
    let out = sfpp(&["predict", "--logits", &logits, "--out", &report]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let acc = value["predicted_accuracy"].as_f64().unwrap();
    assert!([0.0, 0.5, 1.0].contains(&acc));
    assert_eq!(stdout(&out).trim(), format!("{acc:.4}"));
    assert_eq!(value["elapsed_ms"].as_f64(), Some(0.0));
}

#[test]
fn baseline_ac_on_uniform_logits() {
    let dir = tempfile::tempdir().unwrap();
    let logits = matrix_file(dir.path(), "z.npy", &[&[0.0; 4], &[0.0; 4], &[0.0; 4]]);
    let report = path_str(dir.path().join("r.json"));
    let out = sfpp(&["baseline", "--method", "ac", "--logits", &logits, "--out", &report]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out), "0.2500\n");
}

#[test]
fn csv_and_manifest_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("z.csv");
    fs::write(&csv, "a,b,c\n2,0,0\n0,2,0\n0,0,2\n2,0,0\n").unwrap();
    let val = matrix_file(dir.path(), "v.npy", &[&[3.0, 0.0, 0.0], &[0.0, 3.0, 0.0], &[0.0, 0.0, 3.0]]);
    let labels = dir.path().join("y.npy");
    write_array(&labels, &NdArray::from_labels(&[0, 1, 1])).unwrap();
    let manifest = dir.path().join("m.txt");
    fs::write(
        &manifest,
        format!("target_logits = {}\nval_logits = {val}\nval_labels = {}\n", csv.display(), labels.display()),
    )
    .unwrap();
    let report = path_str(dir.path().join("r.json"));
    let m = path_str(manifest);
    let out = sfpp(&["baseline", "--method", "atc-prob", "--manifest", &m, "--out", &report]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let value: f64 = stdout(&out).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&value));
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let logits = matrix_file(dir.path(), "z.npy", &[&[1.0, 0.0], &[0.0, 1.0]]);
    let report = path_str(dir.path().join("r.json"));

    let out = sfpp(&["baseline", "--method", "doc", "--logits", &logits, "--out", &report]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("doc"));

    let missing = path_str(dir.path().join("absent.npy"));
    let out = sfpp(&["predict", "--logits", &missing, "--out", &report]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent.npy"));

    let bias = matrix_file(dir.path(), "b.npy", &[&[0.0, 0.0], &[0.0, 0.0]]);
    let weights = matrix_file(dir.path(), "w.npy", &[&[1.0], &[1.0]]);
    let out = sfpp(&["predict", "--logits", &logits, "--weights", &weights, "--bias", &bias, "--out", &report]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("last_layer_bias") && err.contains("[2, 2]"), "{err}");

    let wide = matrix_file(dir.path(), "v.npy", &[&[1.0, 0.0, 0.0]]);
    let labels = dir.path().join("y.npy");
    write_array(&labels, &NdArray::from_labels(&[0])).unwrap();
    let labels = path_str(labels);
    let out = sfpp(&["baseline", "--method", "doc", "--logits", &logits, "--val-logits", &wide, "--val-labels", &labels, "--out", &report]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("val_logits") && err.contains("target_logits"), "{err}");

    let out = sfpp(&["predict", "--logits", &logits, "--cov-jitter", "-1", "--out", &report]);
    assert_eq!(code(&out), 2);

    let out = sfpp_env(&["predict", "--logits", &logits, "--out", &report], &[("SFPP_THREADS", "many")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let logits = matrix_file(dir.path(), "z.npy", &[&[1e300, -1e300], &[-1e300, 1e300]]);
    let report = path_str(dir.path().join("r.json"));
    let out = sfpp(&["predict", "--logits", &logits, "--out", &report]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn help_lists_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("predict", &["--logits", "--features", "--weights", "--bias", "--mode", "--eq5-literal", "--cov-jitter", "--normalize-threshold", "--out", "--manifest", "--seed"]),
        ("baseline", &["--method", "--logits", "--val-logits", "--val-labels", "--temperature", "--energy-temperature", "--out", "--manifest"]),
        ("bench", &["--suite", "--ratios", "--trials", "--seed", "--out", "--methods"]),
        ("dump-calibration", &["--logits", "--out", "--mode", "--cov-jitter"]),
    ];
    for (sub, flags) in cases {
        let out = sfpp(&[sub, "--help"]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        for flag in *flags {
            assert!(text.contains(flag), "{sub} --help lacks {flag}");
        }
    }
    let top = stdout(&sfpp(&["--help"]));
    for sub in ["predict", "baseline", "bench", "dump-calibration"] {
        assert!(top.contains(sub));
    }
}

#[test]
fn unknown_flags_are_rejected() {
    let out = sfpp(&["predict", "--logits", "z.npy", "--out", "r.json", "--verbose-mode"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--verbose-mode"));
    assert_ne!(code(&sfpp(&["estimate"])), 0);
    assert_ne!(code(&sfpp(&["baseline", "--method", "agree", "--logits", "z.npy", "--out", "r.json"])), 0);
}

#[test]
fn dump_calibration_writes_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let logits = matrix_file(dir.path(), "z.npy", &[&[2.0, 0.0, 0.1], &[0.0, 2.0, 0.3], &[0.2, 0.1, 2.0], &[1.5, 0.2, 0.0]]);
    let out_dir = dir.path().join("dump");
    let out = sfpp(&["dump-calibration", "--logits", &logits, "--out", &path_str(out_dir.clone())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let read = |name: &str| sfpp::ingest::read_array(out_dir.join(name)).unwrap();
    assert_eq!(read("means.npy").shape, vec![3, 3]);
    assert_eq!(read("log_priors.npy").shape, vec![3]);
    assert_eq!(read("covariance.npy").shape, vec![3, 3]);
    let post = read("posteriors.npy").to_matrix("posteriors").unwrap();
    assert_eq!(post.shape(), (4, 3));
    for row in post.row_iter() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn small_suite(dir: &Path) -> String {
    let suite: Vec<serde_json::Value> = (0..3)
        .map(|i| {
            serde_json::json!({
                "name": format!("mini{i}"),
                "seed": 100 + i,
                "class_count": 3 + i,
                "feature_dim": 5,
                "n_source": 300,
                "n_val": 100,
                "n_target": 200,
                "class_separation": 5.0,
                "shift": {"mean_shift": i as f64, "cov_scale": 1.0 + 0.5 * i as f64, "prior_skew": 0.3 * i as f64},
                "classifier": {"learning_rate": 1.0, "iterations": 100}
            })
        })
        .collect();
    let path = dir.join("suite.json");
    fs::write(&path, serde_json::to_string_pretty(&suite).unwrap()).unwrap();
    path_str(path)
}

#[test]
fn bench_output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8", "1"] {
        let out_dir = dir.path().join(format!("out{threads}-{}", outputs.len()));
        let out = sfpp_env(
            &["bench", "--suite", &suite, "--trials", "4", "--seed", "9", "--out", &path_str(out_dir.clone())],
            &[("SFPP_THREADS", threads)],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push((
            fs::read(out_dir.join("mae_table.json")).unwrap(),
            fs::read(out_dir.join("mae_table.csv")).unwrap(),
            out.stdout,
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let csv = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(csv.starts_with("scenario,method,ratio,trial,ae\n"));
}

#[test]
fn reports_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let logits = matrix_file(
        dir.path(),
        "z.npy",
        &[&[2.0, 0.1, -1.0], &[0.3, 1.7, 0.2], &[-0.5, 0.4, 1.1], &[1.2, 1.1, 0.0], &[0.0, 0.2, 0.1]],
    );
    let mut reports = Vec::new();
    for threads in ["1", "2", "8"] {
        let report = dir.path().join(format!("r{threads}.json"));
        let out = sfpp_env(
            &["predict", "--logits", &logits, "--seed", "5", "--out", &path_str(report.clone())],
            &[("SFPP_THREADS", threads)],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        reports.push(fs::read(report).unwrap());
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sfpp::baselines::{self, BaselineConfig, Method};
use sfpp::bench::{self, BenchMethod, SuiteConfig};
use sfpp::calibrator::{posteriors_for, CalibratorConfig, GaussianModel, PosteriorMode};
use sfpp::estimator::{self, EstimatorConfig};
use sfpp::ingest::{self, load_bundle, write_report, Manifest, NdArray};
use sfpp::{Error, ErrorCategory, Result};

/// Unsupervised accuracy estimation from target logits.
#[derive(Debug, Parser)]
#[command(name = "sfpp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Predict target accuracy with the calibrated gradient-norm estimator.
    Predict(PredictArgs),
    /// Run one reference estimator.
    Baseline(BaselineArgs),
    /// Run the synthetic shift benchmark and write the MAE table.
    Bench(BenchArgs),
    /// Write the fitted calibration model and posteriors as NPY arrays.
    DumpCalibration(DumpArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Target logits, n x C (.npy or .csv).
    #[arg(long, required_unless_present = "manifest")]
    logits: Option<PathBuf>,
    /// Penultimate-layer features of the target samples, n x d.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Last-layer weights, C x d.
    #[arg(long, requires = "bias")]
    weights: Option<PathBuf>,
    /// Last-layer bias, length C.
    #[arg(long, requires = "weights")]
    bias: Option<PathBuf>,
    /// Labeled validation logits from the source domain.
    #[arg(long)]
    val_logits: Option<PathBuf>,
    /// Labels matching --val-logits.
    #[arg(long)]
    val_labels: Option<PathBuf>,
    /// `key = path` file listing the arrays; explicit flags override it.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl InputArgs {
    fn manifest(&self) -> Result<Manifest> {
        let mut m = match &self.manifest {
            Some(p) => Manifest::from_file(p)?,
            None => Manifest::new(),
        };
        let pairs = [
            ("target_logits", &self.logits),
            ("target_features", &self.features),
            ("last_layer_weights", &self.weights),
            ("last_layer_bias", &self.bias),
            ("val_logits", &self.val_logits),
            ("val_labels", &self.val_labels),
        ];
        for (key, path) in pairs {
            if let Some(p) = path {
                m.set(key, p)?;
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Args)]
struct CalibrationArgs {
    /// Posterior form.
    #[arg(long, default_value = "bayes")]
    mode: PosteriorMode,
    /// Base jitter, relative to the mean covariance diagonal.
    #[arg(long, default_value_t = 1e-6)]
    cov_jitter: f64,
    /// Class count above which the inverse covariance is normalized.
    #[arg(long, default_value_t = 32)]
    normalize_threshold: usize,
}

impl CalibrationArgs {
    fn config(&self) -> Result<CalibratorConfig> {
        if !(self.cov_jitter >= 0.0 && self.cov_jitter.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "--cov-jitter must be finite and non-negative, got {}",
                self.cov_jitter
            )));
        }
        Ok(CalibratorConfig {
            mode: self.mode,
            cov_jitter: self.cov_jitter,
            normalize_threshold: self.normalize_threshold,
        })
    }
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    calibration: CalibrationArgs,
    /// Count a sample as correct when the uniform-target gradient is the smaller one.
    #[arg(long)]
    eq5_literal: bool,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Seed recorded in the report.
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall-clock time in the report instead of 0.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// One of ac, nuclear, gradnorm, atc-prob, atc-entropy, atc-energy, doc, cot.
    #[arg(long)]
    method: Method,
    #[command(flatten)]
    input: InputArgs,
    /// Softmax temperature for gradnorm.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Temperature of the atc-energy score.
    #[arg(long, default_value_t = 1.0)]
    energy_temperature: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// `default` or a JSON file with an array of scenarios.
    #[arg(long, default_value = "default")]
    suite: String,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,1.0")]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated method ids; all methods when omitted.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Output directory for mae_table.json and mae_table.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DumpArgs {
    /// Target logits, n x C.
    #[arg(long)]
    logits: PathBuf,
    #[command(flatten)]
    calibration: CalibrationArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

fn predict(args: PredictArgs) -> Result<()> {
    let config = EstimatorConfig {
        calibrator: args.calibration.config()?,
        eq5_literal: args.eq5_literal,
    };
    let bundle = load_bundle(&args.input.manifest()?)?;
    let mut report = estimator::predict_accuracy(&bundle, &config)?;
    report.seed = args.seed;
    if !args.timing {
        report.elapsed_ms = 0.0;
    }
    write_report(&report, &args.out)?;
    println!("{:.4}", report.predicted_accuracy);
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<()> {
    positive("--temperature", args.temperature)?;
    positive("--energy-temperature", args.energy_temperature)?;
    let config = BaselineConfig {
        temperature: args.temperature,
        energy_temperature: args.energy_temperature,
        ..BaselineConfig::default()
    };
    let bundle = load_bundle(&args.input.manifest()?)?;
    let mut report = baselines::run(args.method, &bundle, &config)?;
    report.seed = args.seed;
    if !args.timing {
        report.elapsed_ms = 0.0;
    }
    write_report(&report, &args.out)?;
    println!("{:.4}", report.predicted_accuracy);
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let mut config = SuiteConfig {
        ratios: args.ratios,
        trials: args.trials,
        seed: args.seed,
        ..SuiteConfig::default()
    };
    if let Some(ids) = &args.methods {
        config.methods = ids
            .iter()
            .map(|s| BenchMethod::parse(s))
            .collect::<Result<_>>()?;
    }
    let suite = if args.suite == "default" {
        bench::default_suite(args.seed)
    } else {
        bench::load_suite(&args.suite)?
    };
    let table = bench::run_suite(&suite, &config)?;
    table.write(&args.out)?;
    for s in table.summaries.iter().filter(|s| s.ratio == 1.0 || config.ratios.len() == 1) {
        match s.mae {
            Some(mae) => println!("{:<20} {:.4}", s.method, mae),
            None => println!("{:<20} unavailable", s.method),
        }
    }
    Ok(())
}

fn dump_calibration(args: DumpArgs) -> Result<()> {
    let config = args.calibration.config()?;
    let logits = ingest::read_array(&args.logits)?.to_matrix("target_logits")?;
    let model = GaussianModel::fit(&logits, &config)?;
    let output = posteriors_for(&model, &logits, config.mode)?;
    let dir: &Path = &args.out;
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    ingest::write_matrix(dir.join("means.npy"), model.means())?;
    ingest::write_array(
        dir.join("log_priors.npy"),
        &NdArray::from_f64(model.log_priors().to_vec()),
    )?;
    ingest::write_matrix(dir.join("covariance.npy"), model.covariance())?;
    ingest::write_matrix(dir.join("posteriors.npy"), &output.posteriors)?;
    println!("{}", dir.display());
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SFPP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("SFPP_THREADS must be a non-negative integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Input => 2,
        ErrorCategory::Numerical => 3,
        ErrorCategory::MissingValidation => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Predict(a) => predict(a),
        Command::Baseline(a) => baseline(a),
        Command::Bench(a) => run_bench(a),
        Command::DumpCalibration(a) => dump_calibration(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Argmax of the raw logits next to argmax of the calibrated posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelLog {
    pub raw: Vec<usize>,
    pub calibrated: Vec<usize>,
}

/// Outcome of one estimator run on one target set.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: String,
    pub predicted_accuracy: f64,
    pub n_samples: usize,
    pub per_sample_correct: Option<Vec<bool>>,
    /// `(‖∂L(s, PL)‖, ‖∂L(s, U)‖)` per sample.
    pub grad_norm_pairs: Option<Vec<(f64, f64)>>,
    pub pseudo_labels: Option<PseudoLabelLog>,
    pub config_echo: BTreeMap<String, String>,
    pub elapsed_ms: f64,
    pub seed: Option<u64>,
}

impl EstimateReport {
    pub fn new(method: impl Into<String>, predicted_accuracy: f64, n_samples: usize) -> Self {
        EstimateReport {
            method: method.into(),
            predicted_accuracy,
            n_samples,
            per_sample_correct: None,
            grad_norm_pairs: None,
            pseudo_labels: None,
            config_echo: BTreeMap::new(),
            elapsed_ms: 0.0,
            seed: None,
        }
    }

    pub fn with_config(mut self, key: &str, value: impl ToString) -> Self {
        self.config_echo.insert(key.to_string(), value.to_string());
        self
    }

    /// Serializes with a fixed key order and 17 significant digits per real.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        let mut field = |name: &str, value: String| {
            if out.len() > 2 {
                out.push_str(",\n");
            }
            let _ = write!(out, "  {}: {}", json_string(name), value);
        };
        field("method", json_string(&self.method));
        field("predicted_accuracy", format_real(self.predicted_accuracy));
        field("n_samples", self.n_samples.to_string());
        if let Some(correct) = &self.per_sample_correct {
            let items: Vec<&str> = correct.iter().map(|&c| if c { "1" } else { "0" }).collect();
            field("per_sample_correct", format!("[{}]", items.join(",")));
        }
        if let Some(pairs) = &self.grad_norm_pairs {
            let items: Vec<String> = pairs
                .iter()
                .map(|(a, b)| format!("[{},{}]", format_real(*a), format_real(*b)))
                .collect();
            field("grad_norms", format!("[{}]", items.join(",")));
        }
        if let Some(pl) = &self.pseudo_labels {
            field(
                "pseudo_labels",
                format!(
                    "{{\"raw\": {}, \"calibrated\": {}}}",
                    int_list(&pl.raw),
                    int_list(&pl.calibrated)
                ),
            );
        }
        let config: Vec<String> = self
            .config_echo
            .iter()
            .map(|(k, v)| format!("{}: {}", json_string(k), json_string(v)))
            .collect();
        field("config", format!("{{{}}}", config.join(", ")));
        field("elapsed_ms", format_real(self.elapsed_ms));
        field(
            "seed",
            self.seed.map_or_else(|| "null".to_string(), |s| s.to_string()),
        );
        out.push_str("\n}\n");
        out
    }
}

fn int_list(values: &[usize]) -> String {
    let items: Vec<String> = values.iter().map(usize::to_string).collect();
    format!("[{}]", items.join(","))
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// A real with 17 significant digits, as a JSON number (`null` if not
/// finite). Fixed notation for decimal exponents in [-5, 17), scientific
/// otherwise.
pub fn format_real(v: f64) -> String {
    if !v.is_finite() {
        return "null".to_string();
    }
    if v == 0.0 {
        return "0.0".to_string();
    }
    let sci = format!("{v:.16e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .expect("scientific formatting has an exponent");
    if (-5..17).contains(&exp) {
        format!("{:.*}", (16 - exp) as usize, v)
    } else {
        sci
    }
}

pub fn write_report(report: &EstimateReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}

//! Array I/O (NPY and CSV), manifests, dataset bundles and JSON reports.

mod npy;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::numerics::Matrix;

pub use report::{format_real, write_report, EstimateReport, PseudoLabelLog};

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

/// A rank-1 or rank-2 array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NdArray {
    pub fn from_matrix(m: &Matrix) -> Self {
        NdArray {
            shape: vec![m.rows(), m.cols()],
            data: ArrayData::F64(m.as_slice().to_vec()),
        }
    }

    pub fn from_f64(values: Vec<f64>) -> Self {
        NdArray {
            shape: vec![values.len()],
            data: ArrayData::F64(values),
        }
    }

    pub fn from_labels(labels: &[usize]) -> Self {
        NdArray {
            shape: vec![labels.len()],
            data: ArrayData::I64(labels.iter().map(|&l| l as i64).collect()),
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            ArrayData::F64(v) => v.clone(),
            ArrayData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Rank-2 view as a matrix; `name` is used in error messages.
    pub fn to_matrix(&self, name: &str) -> Result<Matrix> {
        match self.shape.as_slice() {
            &[r, c] => Matrix::from_vec(r, c, self.as_f64()),
            other => Err(Error::InvalidInput(format!(
                "`{name}` must be rank 2, got shape {other:?}"
            ))),
        }
    }

    /// Rank-1 real vector (a `(n, 1)` or `(1, n)` array is accepted too).
    pub fn to_vector(&self, name: &str) -> Result<Vec<f64>> {
        match self.shape.as_slice() {
            [_] | [1, _] | [_, 1] => Ok(self.as_f64()),
            other => Err(Error::InvalidInput(format!(
                "`{name}` must be a vector, got shape {other:?}"
            ))),
        }
    }

    /// Integer class labels. Float data is accepted when every entry is
    /// integral (CSV files always load as floats).
    pub fn to_labels(&self, name: &str) -> Result<Vec<i64>> {
        self.to_vector(name)?;
        match &self.data {
            ArrayData::I64(v) => Ok(v.clone()),
            ArrayData::F64(v) => v
                .iter()
                .map(|&x| {
                    if x.fract() == 0.0 && x.abs() < 9.0e15 {
                        Ok(x as i64)
                    } else {
                        Err(Error::InvalidInput(format!(
                            "`{name}` contains non-integer label {x}"
                        )))
                    }
                })
                .collect(),
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads an `.npy` or `.csv` array; the extension selects the format.
pub fn read_array(path: impl AsRef<Path>) -> Result<NdArray> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "npy" => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            npy::decode(&bytes).map_err(|e| Error::format(path, e))
        }
        "csv" => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text).map_err(|e| Error::format(path, e))
        }
        other => Err(Error::format(
            path,
            FormatError::UnknownExtension(other.to_string()),
        )),
    }
}

/// Writes NPY v1.0 (`<f8` or `<i8`, C order).
pub fn write_array(path: impl AsRef<Path>, array: &NdArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, npy::encode(array)).map_err(|e| Error::io(path, e))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_array(path, &NdArray::from_matrix(m))
}

/// Decodes NPY bytes already in memory.
pub fn decode_npy(bytes: &[u8]) -> std::result::Result<NdArray, FormatError> {
    npy::decode(bytes)
}

pub fn encode_npy(array: &NdArray) -> Vec<u8> {
    npy::encode(array)
}

/// Parses comma-separated reals, one row per line. A first line whose first
/// field is not a number is treated as a header and skipped.
pub fn parse_csv(text: &str) -> std::result::Result<NdArray, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(FormatError::RaggedCsv {
                line,
                expected,
                found: record.len(),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| FormatError::BadCsvValue {
                line,
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FormatError::NonFinite(data.len()));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = width.ok_or(FormatError::Empty)?;
    Ok(NdArray {
        shape: vec![rows, cols],
        data: ArrayData::F64(data),
    })
}

pub const MANIFEST_KEYS: [&str; 6] = [
    "target_logits",
    "target_features",
    "last_layer_weights",
    "last_layer_bias",
    "val_logits",
    "val_labels",
];

/// Flat `key = path` listing of the arrays making up a bundle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, PathBuf>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = path` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("manifest line {} is not key = path", n + 1))
            })?;
            manifest.set(key.trim(), value.trim())?;
        }
        Ok(manifest)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, path: impl Into<PathBuf>) -> Result<()> {
        if !MANIFEST_KEYS.contains(&key) {
            return Err(Error::InvalidInput(format!("unknown manifest key `{key}`")));
        }
        self.entries.insert(key.to_string(), path.into());
        Ok(())
    }

    pub fn with(mut self, key: &str, path: impl Into<PathBuf>) -> Result<Self> {
        self.set(key, path)?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&Path> {
        self.entries.get(key).map(PathBuf::as_path)
    }
}

/// Everything an estimator may consume. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    target_logits: Matrix,
    target_features: Option<Matrix>,
    last_layer_weights: Option<Matrix>,
    last_layer_bias: Option<Vec<f64>>,
    validation: Option<(Matrix, Vec<usize>)>,
}

fn shape_mismatch(a: &str, sa: &[usize], b: &str, sb: &[usize]) -> Error {
    Error::ShapeMismatch {
        first: a.into(),
        first_shape: sa.to_vec(),
        second: b.into(),
        second_shape: sb.to_vec(),
    }
}

fn dims(m: &Matrix) -> [usize; 2] {
    [m.rows(), m.cols()]
}

impl DatasetBundle {
    pub fn builder(target_logits: Matrix) -> BundleBuilder {
        BundleBuilder {
            target_logits,
            target_features: None,
            last_layer_weights: None,
            last_layer_bias: None,
            val_logits: None,
            val_labels: None,
        }
    }

    /// Shorthand for a logits-only bundle.
    pub fn from_logits(target_logits: Matrix) -> Result<Self> {
        Self::builder(target_logits).build()
    }

    pub fn target_logits(&self) -> &Matrix {
        &self.target_logits
    }

    pub fn target_features(&self) -> Option<&Matrix> {
        self.target_features.as_ref()
    }

    pub fn last_layer_weights(&self) -> Option<&Matrix> {
        self.last_layer_weights.as_ref()
    }

    pub fn last_layer_bias(&self) -> Option<&[f64]> {
        self.last_layer_bias.as_deref()
    }

    pub fn val_logits(&self) -> Option<&Matrix> {
        self.validation.as_ref().map(|(m, _)| m)
    }

    pub fn val_labels(&self) -> Option<&[usize]> {
        self.validation.as_ref().map(|(_, l)| l.as_slice())
    }

    pub fn class_count(&self) -> usize {
        self.target_logits.cols()
    }

    pub fn n_target(&self) -> usize {
        self.target_logits.rows()
    }

    /// Same bundle with the validation split replaced by the given rows.
    pub fn with_validation_subset(&self, indices: &[usize]) -> Result<Self> {
        let (logits, labels) = self
            .validation
            .as_ref()
            .ok_or_else(|| Error::MissingArray("val_logits".into()))?;
        let mut out = self.clone();
        out.validation = Some((
            logits.select_rows(indices),
            indices.iter().map(|&i| labels[i]).collect(),
        ));
        Ok(out)
    }
}

pub struct BundleBuilder {
    target_logits: Matrix,
    target_features: Option<Matrix>,
    last_layer_weights: Option<Matrix>,
    last_layer_bias: Option<Vec<f64>>,
    val_logits: Option<Matrix>,
    val_labels: Option<Vec<i64>>,
}

impl BundleBuilder {
    pub fn features(mut self, features: Matrix) -> Self {
        self.target_features = Some(features);
        self
    }

    pub fn weights(mut self, weights: Matrix) -> Self {
        self.last_layer_weights = Some(weights);
        self
    }

    pub fn bias(mut self, bias: Vec<f64>) -> Self {
        self.last_layer_bias = Some(bias);
        self
    }

    pub fn validation(mut self, logits: Matrix, labels: Vec<i64>) -> Self {
        self.val_logits = Some(logits);
        self.val_labels = Some(labels);
        self
    }

    pub fn val_logits(mut self, logits: Matrix) -> Self {
        self.val_logits = Some(logits);
        self
    }

    pub fn val_labels(mut self, labels: Vec<i64>) -> Self {
        self.val_labels = Some(labels);
        self
    }

    /// Checks every cross-array invariant and freezes the bundle.
    pub fn build(self) -> Result<DatasetBundle> {
        let logits = &self.target_logits;
        let (n, c) = logits.shape();
        if n < 1 {
            return Err(Error::InvalidInput("`target_logits` has no rows".into()));
        }
        if c < 2 {
            return Err(Error::InvalidInput(format!(
                "`target_logits` needs at least 2 classes, got {c}"
            )));
        }
        if let Some(f) = &self.target_features {
            if f.rows() != n {
                return Err(shape_mismatch(
                    "target_features",
                    &dims(f),
                    "target_logits",
                    &dims(logits),
                ));
            }
        }
        if let Some(w) = &self.last_layer_weights {
            if w.rows() != c {
                return Err(shape_mismatch(
                    "last_layer_weights",
                    &dims(w),
                    "target_logits",
                    &dims(logits),
                ));
            }
            if let Some(f) = &self.target_features {
                if f.cols() != w.cols() {
                    return Err(shape_mismatch(
                        "target_features",
                        &dims(f),
                        "last_layer_weights",
                        &dims(w),
                    ));
                }
            }
        }
        if let Some(b) = &self.last_layer_bias {
            if b.len() != c {
                return Err(shape_mismatch(
                    "last_layer_bias",
                    &[b.len()],
                    "target_logits",
                    &dims(logits),
                ));
            }
        }
        let validation = match (self.val_logits, self.val_labels) {
            (None, None) => None,
            (Some(_), None) => return Err(Error::MissingArray("val_labels".into())),
            (None, Some(_)) => return Err(Error::MissingArray("val_logits".into())),
            (Some(vl), Some(labels)) => {
                if vl.cols() != c {
                    return Err(shape_mismatch(
                        "val_logits",
                        &dims(&vl),
                        "target_logits",
                        &dims(logits),
                    ));
                }
                if labels.len() != vl.rows() {
                    return Err(shape_mismatch(
                        "val_labels",
                        &[labels.len()],
                        "val_logits",
                        &dims(&vl),
                    ));
                }
                let labels = labels
                    .into_iter()
                    .map(|l| {
                        if l < 0 || l as usize >= c {
                            Err(Error::LabelOutOfRange {
                                array: "val_labels".into(),
                                label: l,
                                classes: c,
                            })
                        } else {
                            Ok(l as usize)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some((vl, labels))
            }
        };
        Ok(DatasetBundle {
            target_logits: self.target_logits,
            target_features: self.target_features,
            last_layer_weights: self.last_layer_weights,
            last_layer_bias: self.last_layer_bias,
            validation,
        })
    }
}

/// Reads every array named in the manifest and assembles a validated bundle.
pub fn load_bundle(manifest: &Manifest) -> Result<DatasetBundle> {
    let load = |key: &str| -> Result<Option<NdArray>> {
        manifest.get(key).map(read_array).transpose()
    };
    let logits = load("target_logits")?
        .ok_or_else(|| Error::MissingArray("target_logits".into()))?
        .to_matrix("target_logits")?;
    let mut builder = DatasetBundle::builder(logits);
    if let Some(a) = load("target_features")? {
        builder = builder.features(a.to_matrix("target_features")?);
    }
    if let Some(a) = load("last_layer_weights")? {
        builder = builder.weights(a.to_matrix("last_layer_weights")?);
    }
    if let Some(a) = load("last_layer_bias")? {
        builder = builder.bias(a.to_vector("last_layer_bias")?);
    }
    if let Some(a) = load("val_logits")? {
        builder = builder.val_logits(a.to_matrix("val_logits")?);
    }
    if let Some(a) = load("val_labels")? {
        builder = builder.val_labels(a.to_labels("val_labels")?);
    }
    builder.build()
}

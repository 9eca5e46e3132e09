//! Tabular datasets: CSV ingestion, standardization, splits and the
//! synthetic polynomial benchmark.
//!
//! Rows are stored flat and row-major. Dense features hold their value;
//! categorical features hold the category index (as an exact integer) into
//! the column dictionary, which is built in first-appearance order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns whose population standard deviation is at or below this are
/// rejected by [`standardize`].
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Dense,
    Categorical { dictionary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn dense(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Dense,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.kind, ColumnKind::Dense)
    }

    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            ColumnKind::Dense => None,
            ColumnKind::Categorical { dictionary } => Some(dictionary.len()),
        }
    }
}

/// Feature columns, in model order. The target is not part of the schema.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn all_dense(&self) -> bool {
        self.columns.iter().all(Column::is_dense)
    }

    /// Category counts when every column is categorical.
    pub fn cardinalities(&self) -> Option<Vec<usize>> {
        self.columns.iter().map(Column::cardinality).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    /// Population (divide-by-n) mean and standard deviation.
    pub fn from_values(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(ColumnStats {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Per-feature standardization learned on a training split; `None` for
/// categorical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub features: Vec<Option<ColumnStats>>,
}

impl Standardization {
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if self.features.len() != data.n_features() {
            return Err(Error::Dimension(format!(
                "standardization covers {} features, dataset has {}",
                self.features.len(),
                data.n_features()
            )));
        }
        let mut out = data.clone();
        let n = data.n_features();
        for row in out.values.chunks_mut(n) {
            for (v, stats) in row.iter_mut().zip(&self.features) {
                if let Some(s) = stats {
                    *v = s.apply(*v);
                }
            }
        }
        out.standardization = Some(self.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    values: Vec<f64>,
    targets: Vec<f64>,
    target_name: String,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(schema: Schema, values: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let n = schema.len();
        if n == 0 {
            return Err(Error::Input("dataset has no feature columns".into()));
        }
        if values.len() != targets.len() * n {
            return Err(Error::Dimension(format!(
                "{} values for {} rows of {n} features",
                values.len(),
                targets.len()
            )));
        }
        for (i, row) in values.chunks(n).enumerate() {
            for (col, &v) in schema.columns.iter().zip(row) {
                let ok = match col.cardinality() {
                    None => v.is_finite(),
                    Some(k) => v >= 0.0 && v.fract() == 0.0 && (v as usize) < k,
                };
                if !ok {
                    return Err(Error::Input(format!(
                        "row {i}: value {v} is invalid for column `{}`",
                        col.name
                    )));
                }
            }
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::Input(format!("row {i}: target is not finite")));
        }
        Ok(Dataset {
            schema,
            values,
            targets,
            target_name: "target".into(),
            standardization: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(schema: Schema, rows: &[R], targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let values = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Dataset::new(schema, values, targets)
    }

    /// All-dense dataset with columns `x1..xN`.
    pub fn dense<R: AsRef<[f64]>>(rows: &[R], targets: Vec<f64>) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let schema = Schema {
            columns: (1..=n).map(|i| Column::dense(format!("x{i}"))).collect(),
        };
        Dataset::from_rows(schema, rows, targets)
    }

    pub fn with_target_name(mut self, name: impl Into<String>) -> Self {
        self.target_name = name.into();
        self
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_features();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone + '_ {
        self.values.chunks(self.n_features())
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn column_values(&self, feature: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        self.rows().map(move |r| r[feature])
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.n_features());
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Dataset {
            schema: self.schema.clone(),
            values,
            targets,
            target_name: self.target_name.clone(),
            standardization: self.standardization.clone(),
        }
    }

    pub fn map_targets(&self, f: impl Fn(f64) -> f64) -> Dataset {
        let mut out = self.clone();
        out.targets.iter_mut().for_each(|t| *t = f(*t));
        out
    }

    /// Writes the dataset as CSV with the target as the last column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::Input(format!("writing CSV: {e}"));
        let header = self
            .schema
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .chain(std::iter::once(self.target_name.as_str()));
        w.write_record(header).map_err(to_err)?;
        for (row, target) in self.rows().zip(&self.targets) {
            let mut record: Vec<String> = row
                .iter()
                .zip(&self.schema.columns)
                .map(|(v, c)| match &c.kind {
                    ColumnKind::Dense => v.to_string(),
                    ColumnKind::Categorical { dictionary } => dictionary[*v as usize].clone(),
                })
                .collect();
            record.push(target.to_string());
            w.write_record(&record).map_err(to_err)?;
        }
        w.flush()
            .map_err(|e| Error::Input(format!("writing CSV: {e}")))
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// How to interpret CSV columns.
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Target column name; when absent all columns are features and targets are 0.
    pub target_column: Option<String>,
    /// Columns to dictionary-encode; all others are parsed as floats.
    pub categorical_columns: Vec<String>,
    /// Fixed feature schema (for inference). Columns are matched by name,
    /// dictionaries are frozen and unseen categories are errors.
    pub schema: Option<Schema>,
}

impl CsvOptions {
    pub fn with_target(target: impl Into<String>) -> Self {
        CsvOptions {
            target_column: Some(target.into()),
            ..CsvOptions::default()
        }
    }
}

enum Slot {
    Dense,
    Categorical {
        lookup: HashMap<String, usize>,
        dictionary: Vec<String>,
        frozen: bool,
    },
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), options)
}

pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            line,
            column: 0,
            message: e.to_string(),
        }
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "missing header row".into(),
        });
    }
    let position = |name: &str| header.iter().position(|h| h == name);

    let target_idx = match &options.target_column {
        Some(t) => Some(position(t).ok_or_else(|| {
            Error::Input(format!("target column `{t}` not found in header"))
        })?),
        None => None,
    };
    for c in &options.categorical_columns {
        if position(c).is_none() {
            return Err(Error::Input(format!("categorical column `{c}` not found in header")));
        }
    }

    // (csv column index, slot, name)
    let mut features: Vec<(usize, Slot, String)> = match &options.schema {
        Some(schema) => schema
            .columns
            .iter()
            .map(|col| {
                let idx = position(&col.name).ok_or_else(|| {
                    Error::Input(format!("column `{}` required by the model is missing", col.name))
                })?;
                let slot = match &col.kind {
                    ColumnKind::Dense => Slot::Dense,
                    ColumnKind::Categorical { dictionary } => Slot::Categorical {
                        lookup: dictionary.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect(),
                        dictionary: dictionary.clone(),
                        frozen: true,
                    },
                };
                Ok((idx, slot, col.name.clone()))
            })
            .collect::<Result<_>>()?,
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != target_idx)
            .map(|(i, name)| {
                let slot = if options.categorical_columns.iter().any(|c| c == name) {
                    Slot::Categorical {
                        lookup: HashMap::new(),
                        dictionary: Vec::new(),
                        frozen: false,
                    }
                } else {
                    Slot::Dense
                };
                (i, slot, name.clone())
            })
            .collect(),
    };

    let mut values = Vec::new();
    let mut targets = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |idx: usize| -> Result<&str> {
            let raw = record.get(idx).map(str::trim).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::Parse {
                    line,
                    column: idx + 1,
                    message: format!("missing value in column `{}`", header[idx]),
                });
            }
            Ok(raw)
        };
        let parse_float = |idx: usize| -> Result<f64> {
            let raw = field(idx)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    column: idx + 1,
                    message: format!("`{raw}` in column `{}` is not a finite number", header[idx]),
                })
        };
        for (idx, slot, name) in features.iter_mut() {
            let v = match slot {
                Slot::Dense => parse_float(*idx)?,
                Slot::Categorical {
                    lookup,
                    dictionary,
                    frozen,
                } => {
                    let raw = field(*idx)?;
                    match lookup.get(raw) {
                        Some(&i) => i as f64,
                        None if *frozen => {
                            return Err(Error::Input(format!(
                                "line {line}: unseen category `{raw}` in column `{name}`"
                            )))
                        }
                        None => {
                            let i = dictionary.len();
                            dictionary.push(raw.to_string());
                            lookup.insert(raw.to_string(), i);
                            i as f64
                        }
                    }
                }
            };
            values.push(v);
        }
        targets.push(match target_idx {
            Some(t) => parse_float(t)?,
            None => 0.0,
        });
    }

    let schema = Schema {
        columns: features
            .into_iter()
            .map(|(_, slot, name)| Column {
                name,
                kind: match slot {
                    Slot::Dense => ColumnKind::Dense,
                    Slot::Categorical { dictionary, .. } => ColumnKind::Categorical { dictionary },
                },
            })
            .collect(),
    };
    let dataset = Dataset::new(schema, values, targets)?;
    Ok(match &options.target_column {
        Some(t) => dataset.with_target_name(t.clone()),
        None => dataset,
    })
}

/// Learns per-feature mean and population standard deviation of the dense
/// columns of `train`.
pub fn standardize(train: &Dataset) -> Result<Standardization> {
    if train.is_empty() {
        return Err(Error::Preprocessing("cannot standardize an empty dataset".into()));
    }
    let features = train
        .schema()
        .columns
        .iter()
        .enumerate()
        .map(|(n, col)| {
            if !col.is_dense() {
                return Ok(None);
            }
            let stats = ColumnStats::from_values(train.column_values(n)).expect("non-empty");
            if stats.std <= MIN_STD {
                return Err(Error::Preprocessing(format!(
                    "column `{}` is constant (std {})",
                    col.name, stats.std
                )));
            }
            Ok(Some(stats))
        })
        .collect::<Result<_>>()?;
    Ok(Standardization { features })
}

pub fn target_stats(train: &Dataset) -> Result<ColumnStats> {
    let stats = ColumnStats::from_values(train.targets().iter().copied())
        .ok_or_else(|| Error::Preprocessing("empty dataset".into()))?;
    if stats.std <= MIN_STD {
        return Err(Error::Preprocessing("target is constant".into()));
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    /// Fraction of the rows left after removing the test split.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Shuffles rows with `spec.seed`, then carves off test, validation and
/// train in that order. Split sizes are rounded to the nearest row.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    for (name, f) in [
        ("test_fraction", spec.test_fraction),
        ("validation_fraction", spec.validation_fraction),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    let n = data.len();
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_val = ((n - n_test.min(n)) as f64 * spec.validation_fraction).round() as usize;
    if n_test == 0 || n_val == 0 || n_test + n_val >= n {
        return Err(Error::Config(format!(
            "{n} rows cannot be split into non-empty train/validation/test sets \
             with fractions {}/{}",
            spec.test_fraction, spec.validation_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(Splits {
        test: data.select(&order[..n_test]),
        validation: data.select(&order[n_test..n_test + n_val]),
        train: data.select(&order[n_test + n_val..]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub informative: usize,
    pub noise_features: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Drop the pairwise and squared terms from the target.
    pub linear_only: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 3000,
            informative: 4,
            noise_features: 3,
            noise_std: 0.35,
            seed: 0,
            linear_only: false,
        }
    }
}

/// Generating coefficients of a synthetic target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialTruth {
    pub bias: f64,
    /// One per informative feature.
    pub linear: Vec<f64>,
    /// `((i, j), c)` for `c x_i x_j`, `i <= j`, over informative features.
    pub quadratic: Vec<((usize, usize), f64)>,
}

impl PolynomialTruth {
    pub fn evaluate(&self, row: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(row).map(|(w, x)| w * x).sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|&((i, j), c)| c * row[i] * row[j])
            .sum();
        self.bias + lin + quad
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: PolynomialTruth,
}

/// Standard-normal features; the target is a random second-order polynomial
/// of the first `informative` features plus Gaussian noise. The remaining
/// `noise_features` columns carry no signal.
pub fn generate_synthetic_poly(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_samples == 0 || spec.informative == 0 {
        return Err(Error::Config("synthetic data needs at least one sample and one informative feature".into()));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::Config(format!("noise_std must be >= 0, got {}", spec.noise_std)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coef = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let k = spec.informative;
    let bias = coef.sample(&mut rng);
    let linear: Vec<f64> = (0..k).map(|_| coef.sample(&mut rng)).collect();
    let mut quadratic = Vec::new();
    for i in 0..k {
        for j in i..k {
            let c = coef.sample(&mut rng);
            if !spec.linear_only {
                quadratic.push(((i, j), c));
            }
        }
    }
    let truth = PolynomialTruth {
        bias,
        linear,
        quadratic,
    };

    let n_features = k + spec.noise_features;
    let noise = Normal::new(0.0, spec.noise_std).expect("non-negative std");
    let mut values = Vec::with_capacity(spec.n_samples * n_features);
    let mut targets = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let start = values.len();
        values.extend((0..n_features).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = truth.evaluate(&values[start..]) + noise.sample(&mut rng);
        targets.push(y);
    }
    let schema = Schema {
        columns: (1..=n_features).map(|i| Column::dense(format!("x{i}"))).collect(),
    };
    Ok(SyntheticData {
        dataset: Dataset::new(schema, values, targets)?.with_target_name("y"),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, options: &CsvOptions) -> Result<Dataset> {
        read_csv(text.as_bytes(), options)
    }

    #[test]
    fn loads_dense_and_categorical_columns() {
        let opts = CsvOptions {
            target_column: Some("y".into()),
            categorical_columns: vec!["color".into()],
            schema: None,
        };
        let d = parse("size,color,y\n1.5,red,1\n-2,blue,0\n", &opts).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.schema().columns[1].cardinality(), Some(2));
        assert_eq!(d.row(0), &[1.5, 0.0]);
        assert_eq!(d.row(1), &[-2.0, 1.0]);
        assert_eq!(d.targets(), &[1.0, 0.0]);
    }

    #[test]
    fn reports_bad_tokens_with_position() {
        let opts = CsvOptions::with_target("y");
        match parse("a,y\n1,2\nfoo,3\n", &opts) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse("a,y\n1,\n", &opts), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("a,b\n1,2\n", &opts), Err(Error::Input(_))));
    }

    #[test]
    fn frozen_schema_rejects_unseen_categories() {
        let opts = CsvOptions {
            target_column: Some("y".into()),
            categorical_columns: vec!["c".into()],
            schema: None,
        };
        let train = parse("c,y\na,1\nb,2\n", &opts).unwrap();
        let infer = CsvOptions {
            schema: Some(train.schema().clone()),
            ..CsvOptions::default()
        };
        let ok = parse("c\nb\na\n", &infer).unwrap();
        assert_eq!(ok.row(0), &[1.0]);
        match parse("c\nzzz\n", &infer) {
            Err(Error::Input(msg)) => assert!(msg.contains("zzz")),
            other => panic!("expected unseen-category error, got {other:?}"),
        }
        match parse("other\n1\n", &infer) {
            Err(Error::Input(msg)) => assert!(msg.contains("`c`")),
            other => panic!("expected missing-column error, got {other:?}"),
        }
    }

    #[test]
    fn encoding_is_stable() {
        let opts = CsvOptions {
            target_column: Some("y".into()),
            categorical_columns: vec!["c".into()],
            schema: None,
        };
        let text = "c,y\nq,1\np,2\nq,3\nr,4\n";
        assert_eq!(parse(text, &opts).unwrap(), parse(text, &opts).unwrap());
        let d = parse(text, &opts).unwrap();
        assert_eq!(
            d.schema().columns[0].kind,
            ColumnKind::Categorical {
                dictionary: vec!["q".into(), "p".into(), "r".into()]
            }
        );
    }

    #[test]
    fn csv_round_trip() {
        let opts = CsvOptions {
            target_column: Some("y".into()),
            categorical_columns: vec!["c".into()],
            schema: None,
        };
        let d = parse("v,c,y\n0.1,a,1e-3\n-3.25,b,7\n12345.678901234,a,-0.5\n", &opts).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &opts).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn standardization_examples() {
        let d = Dataset::dense(&[[2.0], [4.0]], vec![0.0, 0.0]).unwrap();
        let s = standardize(&d).unwrap();
        assert_eq!(s.features[0], Some(ColumnStats { mean: 3.0, std: 1.0 }));
        let z = s.apply(&d).unwrap();
        assert_eq!(z.row(0), &[-1.0]);
        assert_eq!(z.row(1), &[1.0]);

        let already = Dataset::dense(&[[-1.0], [1.0]], vec![0.0, 0.0]).unwrap();
        let s = standardize(&already).unwrap();
        let z = s.apply(&already).unwrap();
        assert!((z.row(0)[0] + 1.0).abs() <= 1e-9);

        let constant = Dataset::dense(&[[5.0], [5.0], [5.0]], vec![0.0; 3]).unwrap();
        assert!(matches!(standardize(&constant), Err(Error::Preprocessing(_))));
    }

    #[test]
    fn standardization_uses_training_stats_only() {
        let syn = generate_synthetic_poly(&SyntheticSpec { n_samples: 500, ..SyntheticSpec::default() }).unwrap();
        let splits = split(&syn.dataset, &SplitSpec::default()).unwrap();
        let shifted = splits.test.select(&(0..splits.test.len()).collect::<Vec<_>>());
        let shifted = {
            let rows: Vec<Vec<f64>> = shifted.rows().map(|r| r.iter().map(|v| v + 10.0).collect()).collect();
            Dataset::from_rows(shifted.schema().clone(), &rows, shifted.targets().to_vec()).unwrap()
        };
        let stats = standardize(&splits.train).unwrap();
        let train = stats.apply(&splits.train).unwrap();
        for n in 0..train.n_features() {
            let s = ColumnStats::from_values(train.column_values(n)).unwrap();
            assert!(s.mean.abs() <= 1e-9);
            assert!((s.std - 1.0).abs() <= 1e-9);
        }
        let test = stats.apply(&shifted).unwrap();
        assert_eq!(test.standardization(), Some(&stats));
        // Shifting test data moves its standardized mean; it is not re-centered.
        let m = ColumnStats::from_values(test.column_values(0)).unwrap().mean;
        assert!(m > 5.0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rows: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let d = Dataset::dense(&rows, (0..10).map(f64::from).collect()).unwrap();
        let spec = SplitSpec { seed: 3, ..SplitSpec::default() };
        let s = split(&d, &spec).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));

        let again = split(&d, &spec).unwrap();
        assert_eq!(s.train, again.train);
        assert_eq!(s.test, again.test);

        let mut all: Vec<f64> = [&s.train, &s.validation, &s.test]
            .iter()
            .flat_map(|p| p.targets().to_vec())
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());

        let tiny = Dataset::dense(&rows[..2], vec![0.0, 1.0]).unwrap();
        assert!(matches!(split(&tiny, &spec), Err(Error::Config(_))));
        assert!(split(&d, &SplitSpec { test_fraction: 1.0, ..spec }).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_shaped() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic_poly(&spec).unwrap();
        let b = generate_synthetic_poly(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.dataset.len(), 3000);
        assert_eq!(a.dataset.n_features(), 7);
        assert_eq!(a.truth.quadratic.len(), 10);
        let c = generate_synthetic_poly(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn synthetic_noise_free_targets_match_truth() {
        let spec = SyntheticSpec { n_samples: 50, noise_std: 0.0, ..SyntheticSpec::default() };
        let syn = generate_synthetic_poly(&spec).unwrap();
        for (row, y) in syn.dataset.rows().zip(syn.dataset.targets()) {
            assert_eq!(syn.truth.evaluate(row), *y);
        }
    }
}

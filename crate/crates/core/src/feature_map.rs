//! Local feature maps applied to each feature before contraction with the
//! weight tensor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapKind {
    /// `[1, x, x^2, ..., x^(d-1)]`
    #[serde(rename = "poly")]
    Polynomial,
    /// The polynomial map scaled to unit Euclidean norm.
    #[serde(rename = "poly-norm")]
    NormalizedPolynomial,
    /// `[1, one_hot(value)]` with one slot per category.
    #[serde(rename = "categorical")]
    Categorical,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Polynomial => "poly",
            MapKind::NormalizedPolynomial => "poly-norm",
            MapKind::Categorical => "categorical",
        }
    }

    pub fn is_polynomial(self) -> bool {
        !matches!(self, MapKind::Categorical)
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poly" => Ok(MapKind::Polynomial),
            "poly-norm" => Ok(MapKind::NormalizedPolynomial),
            "categorical" => Ok(MapKind::Categorical),
            other => Err(Error::Usage(format!(
                "unknown map `{other}` (expected poly, poly-norm or categorical)"
            ))),
        }
    }
}

pub fn map_polynomial(x: f64, d: usize) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::Input(format!("local dimension {d} < 2")));
    }
    if !x.is_finite() {
        return Err(Error::Input(format!("non-finite feature value {x}")));
    }
    let mut out = Vec::with_capacity(d);
    let mut power = 1.0;
    for _ in 0..d {
        out.push(power);
        power *= x;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericRange(format!(
            "x = {x} raised to power {} overflows",
            d - 1
        )));
    }
    Ok(out)
}

pub fn map_normalized_polynomial(x: f64, d: usize) -> Result<Vec<f64>> {
    let mut out = map_polynomial(x, d)?;
    let sum_sq: f64 = out.iter().map(|v| v * v).sum();
    if !sum_sq.is_finite() {
        return Err(Error::NumericRange(format!(
            "sum of squared powers of x = {x} overflows at d = {d}"
        )));
    }
    let inv = 1.0 / sum_sq.sqrt();
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

pub fn map_categorical(value_index: usize, cardinality: usize) -> Result<Vec<f64>> {
    if value_index >= cardinality {
        return Err(Error::Input(format!(
            "category index {value_index} out of range for cardinality {cardinality}"
        )));
    }
    let mut out = vec![0.0; cardinality + 1];
    out[0] = 1.0;
    out[value_index + 1] = 1.0;
    Ok(out)
}

/// A mapped feature `φ(x_n)`, kept sparse for categorical values.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalFeature {
    Dense(Vec<f64>),
    /// `[1, e_index]` of length `len`; nonzero only at `0` and `index + 1`.
    OneHot { index: usize, len: usize },
}

impl LocalFeature {
    pub fn len(&self) -> usize {
        match self {
            LocalFeature::Dense(v) => v.len(),
            LocalFeature::OneHot { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            LocalFeature::Dense(v) => v.clone(),
            LocalFeature::OneHot { index, len } => {
                let mut v = vec![0.0; *len];
                v[0] = 1.0;
                v[index + 1] = 1.0;
                v
            }
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            LocalFeature::Dense(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            LocalFeature::OneHot { .. } => std::f64::consts::SQRT_2,
        }
    }

    /// Writes `φ^T A` into `out` (length `A.cols()`).
    pub fn project_into(&self, factor: &Matrix, out: &mut [f64]) {
        debug_assert_eq!(self.len(), factor.rows());
        debug_assert_eq!(out.len(), factor.cols());
        match self {
            LocalFeature::Dense(v) => {
                out.fill(0.0);
                for (i, &phi) in v.iter().enumerate() {
                    if phi == 0.0 {
                        continue;
                    }
                    for (o, a) in out.iter_mut().zip(factor.row(i)) {
                        *o += phi * a;
                    }
                }
            }
            LocalFeature::OneHot { index, .. } => {
                for ((o, a), b) in out
                    .iter_mut()
                    .zip(factor.row(0))
                    .zip(factor.row(index + 1))
                {
                    *o = a + b;
                }
            }
        }
    }

    pub fn project(&self, factor: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; factor.cols()];
        self.project_into(factor, &mut out);
        out
    }

    /// `target += scale * φ coeffs^T`, touching only rows where `φ` is nonzero.
    pub fn add_outer(&self, target: &mut Matrix, coeffs: &[f64], scale: f64) {
        debug_assert_eq!(self.len(), target.rows());
        debug_assert_eq!(coeffs.len(), target.cols());
        let mut add_row = |row: usize, weight: f64| {
            let w = scale * weight;
            for (t, c) in target.row_mut(row).iter_mut().zip(coeffs) {
                *t += w * c;
            }
        };
        match self {
            LocalFeature::Dense(v) => {
                for (i, &phi) in v.iter().enumerate() {
                    if phi != 0.0 {
                        add_row(i, phi);
                    }
                }
            }
            LocalFeature::OneHot { index, .. } => {
                add_row(0, 1.0);
                add_row(index + 1, 1.0);
            }
        }
    }
}

/// Which local map each feature uses and its local dimension.
///
/// All features share one [`MapKind`]. For polynomial kinds every feature has
/// the same dimension `d >= 2`; for the categorical kind feature `n` has
/// dimension `K_n + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMapSpec {
    kind: MapKind,
    local_dims: Vec<usize>,
}

impl FeatureMapSpec {
    pub fn new(kind: MapKind, local_dims: Vec<usize>) -> Result<Self> {
        if local_dims.is_empty() {
            return Err(Error::Validation("feature map covers zero features".into()));
        }
        match kind {
            MapKind::Polynomial | MapKind::NormalizedPolynomial => {
                let d = local_dims[0];
                if d < 2 {
                    return Err(Error::Validation(format!(
                        "polynomial local dimension must be >= 2, got {d}"
                    )));
                }
                if local_dims.iter().any(|&x| x != d) {
                    return Err(Error::Validation(format!(
                        "polynomial maps need a uniform local dimension, got {local_dims:?}"
                    )));
                }
            }
            MapKind::Categorical => {
                if let Some(n) = local_dims.iter().position(|&x| x < 2) {
                    return Err(Error::Validation(format!(
                        "categorical feature {n} needs at least one category"
                    )));
                }
            }
        }
        Ok(FeatureMapSpec { kind, local_dims })
    }

    pub fn polynomial(n_features: usize, d: usize) -> Result<Self> {
        FeatureMapSpec::new(MapKind::Polynomial, vec![d; n_features])
    }

    pub fn normalized_polynomial(n_features: usize, d: usize) -> Result<Self> {
        FeatureMapSpec::new(MapKind::NormalizedPolynomial, vec![d; n_features])
    }

    pub fn categorical(cardinalities: &[usize]) -> Result<Self> {
        if let Some(n) = cardinalities.iter().position(|&k| k == 0) {
            return Err(Error::Validation(format!(
                "categorical feature {n} has zero categories"
            )));
        }
        FeatureMapSpec::new(
            MapKind::Categorical,
            cardinalities.iter().map(|k| k + 1).collect(),
        )
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn local_dims(&self) -> &[usize] {
        &self.local_dims
    }

    pub fn local_dim(&self, feature: usize) -> usize {
        self.local_dims[feature]
    }

    pub fn n_features(&self) -> usize {
        self.local_dims.len()
    }

    /// Category count `K_n` for categorical maps.
    pub fn cardinality(&self, feature: usize) -> Option<usize> {
        (self.kind == MapKind::Categorical).then(|| self.local_dims[feature] - 1)
    }

    /// Reorders features; `order[k]` is the old index that becomes feature `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        FeatureMapSpec {
            kind: self.kind,
            local_dims: order.iter().map(|&i| self.local_dims[i]).collect(),
        }
    }

    /// Maps one raw value. Categorical values are category indices stored as
    /// exact non-negative integers.
    pub fn local_feature(&self, feature: usize, x: f64) -> Result<LocalFeature> {
        let d = self.local_dims[feature];
        match self.kind {
            MapKind::Polynomial => map_polynomial(x, d).map(LocalFeature::Dense),
            MapKind::NormalizedPolynomial => {
                map_normalized_polynomial(x, d).map(LocalFeature::Dense)
            }
            MapKind::Categorical => {
                let index = category_index(x)?;
                if index >= d - 1 {
                    return Err(Error::Input(format!(
                        "category index {index} out of range for feature {feature} with {} categories",
                        d - 1
                    )));
                }
                Ok(LocalFeature::OneHot { index, len: d })
            }
        }
    }

    pub fn map_row(&self, row: &[f64]) -> Result<Vec<LocalFeature>> {
        self.check_row(row)?;
        row.iter()
            .enumerate()
            .map(|(n, &x)| self.local_feature(n, x))
            .collect()
    }

    pub fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features() {
            return Err(Error::Input(format!(
                "row has {} features, model expects {}",
                row.len(),
                self.n_features()
            )));
        }
        Ok(())
    }
}

fn category_index(x: f64) -> Result<usize> {
    if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(Error::Input(format!(
            "categorical value {x} is not a category index"
        )))
    }
}

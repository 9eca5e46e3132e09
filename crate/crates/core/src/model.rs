//! The CP-format predictor.
//!
//! The weight tensor `W` over all feature interactions is never formed. It is
//! held as `N` factor matrices `A^(n)` of shape `d_n x R`, with
//! `W[i_1, ..., i_N] = sum_r prod_n A^(n)[i_n, r]`. Because the mapped input
//! `Φ(x) = φ(x_1) ∘ ... ∘ φ(x_N)` is rank one, the inner product `<Φ(x), W>`
//! collapses to `sum_r prod_n (φ(x_n)^T A^(n))_r`, which costs `O(N R d)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{FeatureMapSpec, LocalFeature, MapKind};
use crate::linalg::Matrix;

pub const FORMAT_VERSION: u32 = 1;

/// Entries of `φ^T A` at or below this magnitude disable the division-based
/// gradient shortcut.
pub const DIVISION_SAFETY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    factors: Vec<Matrix>,
    rank: usize,
    map_spec: FeatureMapSpec,
}

/// One matrix per factor, each shaped like the corresponding `A^(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGradients(Vec<Matrix>);

impl FactorGradients {
    pub fn zeros_like(model: &CpModel) -> Self {
        FactorGradients(
            model
                .factors
                .iter()
                .map(|a| Matrix::zeros(a.rows(), a.cols()))
                .collect(),
        )
    }

    pub fn from_matrices(matrices: Vec<Matrix>) -> Self {
        FactorGradients(matrices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, n: usize) -> &Matrix {
        &self.0[n]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.0
    }

    pub fn matrices_mut(&mut self) -> &mut [Matrix] {
        &mut self.0
    }

    pub fn into_matrices(self) -> Vec<Matrix> {
        self.0
    }

    pub fn fill_zero(&mut self) {
        for m in &mut self.0 {
            m.as_mut_slice().fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|m| m.scale(factor));
    }

    pub fn add_scaled(&mut self, other: &FactorGradients, factor: f64) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Dimension(format!(
                "{} gradient blocks against {}",
                self.0.len(),
                other.0.len()
            )));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(b, factor)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Matrix::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|m| m.as_slice())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Intermediate products for one sample: `m_n = φ(x_n)^T A^(n)`.
#[derive(Debug, Clone)]
pub(crate) struct Projections {
    rank: usize,
    m: Vec<f64>,
}

impl Projections {
    fn new(n_features: usize, rank: usize) -> Self {
        Projections {
            rank,
            m: vec![0.0; n_features * rank],
        }
    }

    fn get(&self, n: usize) -> &[f64] {
        &self.m[n * self.rank..(n + 1) * self.rank]
    }

    fn n_features(&self) -> usize {
        self.m.len() / self.rank
    }
}

/// Reusable buffers for repeated prediction and gradient evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    projections: Projections,
    prefix: Vec<f64>,
    suffix: Vec<f64>,
    coeffs: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &CpModel) -> Self {
        let n = model.n_features();
        let r = model.rank;
        Workspace {
            projections: Projections::new(n, r),
            prefix: vec![0.0; (n + 1) * r],
            suffix: vec![0.0; (n + 1) * r],
            coeffs: vec![0.0; r],
        }
    }
}

impl CpModel {
    pub fn new(factors: Vec<Matrix>, map_spec: FeatureMapSpec) -> Result<Self> {
        if factors.len() != map_spec.n_features() {
            return Err(Error::Validation(format!(
                "{} factor matrices for {} features",
                factors.len(),
                map_spec.n_features()
            )));
        }
        let rank = factors[0].cols();
        if rank == 0 {
            return Err(Error::Validation("rank must be at least 1".into()));
        }
        for (n, a) in factors.iter().enumerate() {
            if a.cols() != rank {
                return Err(Error::Validation(format!(
                    "factor {n} has {} columns, factor 0 has {rank}",
                    a.cols()
                )));
            }
            if a.rows() != map_spec.local_dim(n) {
                return Err(Error::Validation(format!(
                    "factor {n} has {} rows, feature map expects {}",
                    a.rows(),
                    map_spec.local_dim(n)
                )));
            }
            if !a.is_finite() {
                return Err(Error::Validation(format!(
                    "factor {n} has non-finite entries"
                )));
            }
        }
        Ok(CpModel {
            factors,
            rank,
            map_spec,
        })
    }

    pub fn zeros(map_spec: FeatureMapSpec, rank: usize) -> Result<Self> {
        let factors = map_spec
            .local_dims()
            .iter()
            .map(|&d| Matrix::zeros(d, rank))
            .collect();
        CpModel::new(factors, map_spec)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_features(&self) -> usize {
        self.factors.len()
    }

    pub fn map_spec(&self) -> &FeatureMapSpec {
        &self.map_spec
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Matrix {
        &self.factors[n]
    }

    /// Mutable access to factor entries; shapes stay fixed.
    pub fn factors_mut(&mut self) -> &mut [Matrix] {
        &mut self.factors
    }

    pub fn parameter_count(&self) -> usize {
        self.factors.iter().map(|a| a.rows() * a.cols()).sum()
    }

    /// Reorders features together with their factor matrices;
    /// `order[k]` is the old feature placed at position `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_features()];
        if order.len() != self.n_features()
            || order
                .iter()
                .any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Input(format!(
                "{order:?} is not a permutation of {} features",
                self.n_features()
            )));
        }
        CpModel::new(
            order.iter().map(|&i| self.factors[i].clone()).collect(),
            self.map_spec.permuted(order),
        )
    }

    fn project_all(&self, features: &[LocalFeature], proj: &mut Projections) {
        let r = self.rank;
        for (n, (phi, a)) in features.iter().zip(&self.factors).enumerate() {
            phi.project_into(a, &mut proj.m[n * r..(n + 1) * r]);
        }
    }

    /// Prediction from already-mapped features.
    pub fn predict_mapped(&self, features: &[LocalFeature], ws: &mut Workspace) -> Result<f64> {
        self.project_all(features, &mut ws.projections);
        let proj = &ws.projections;
        let acc = &mut ws.coeffs;
        acc.fill(1.0);
        for n in 0..proj.n_features() {
            for (a, m) in acc.iter_mut().zip(proj.get(n)) {
                *a *= m;
            }
        }
        let value: f64 = acc.iter().sum();
        if !value.is_finite() {
            return Err(Error::NumericRange(format!(
                "prediction is not finite ({value})"
            )));
        }
        Ok(value)
    }

    /// `f(x) = (⊛_n φ(x_n)^T A^(n)) 1`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let features = self.map_spec.map_row(x)?;
        self.predict_mapped(&features, &mut Workspace::new(self))
    }

    pub fn predict_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        let mut ws = Workspace::new(self);
        rows.iter()
            .enumerate()
            .map(|(i, row)| {
                self.map_spec
                    .map_row(row.as_ref())
                    .and_then(|f| self.predict_mapped(&f, &mut ws))
                    .map_err(|e| e.at_row(i))
            })
            .collect()
    }

    /// Fills prefix/suffix Hadamard products from the current projections.
    /// `prefix[n] = ⊛_{k<n} m_k`, `suffix[n] = ⊛_{k>=n} m_k`.
    fn prefix_suffix(ws: &mut Workspace) {
        let r = ws.projections.rank;
        let n_feat = ws.projections.n_features();
        ws.prefix[..r].fill(1.0);
        for n in 0..n_feat {
            let (done, rest) = ws.prefix.split_at_mut((n + 1) * r);
            let prev = &done[n * r..];
            for ((dst, p), m) in rest[..r].iter_mut().zip(prev).zip(ws.projections.get(n)) {
                *dst = p * m;
            }
        }
        ws.suffix[n_feat * r..].fill(1.0);
        for n in (0..n_feat).rev() {
            let (head, tail) = ws.suffix.split_at_mut((n + 1) * r);
            let next = &tail[..r];
            for ((dst, s), m) in head[n * r..].iter_mut().zip(next).zip(ws.projections.get(n)) {
                *dst = s * m;
            }
        }
    }

    /// Adds `scale(f(x)) * ∂f/∂A^(n)` for every `n` into `grads` and returns
    /// `f(x)`. The scale sees the prediction so a loss derivative can be
    /// applied in the same pass.
    ///
    /// Uses prefix and suffix products instead of dividing the full product by
    /// `m_n`, so zero entries of `φ^T A` (common with one-hot inputs) are safe.
    pub fn accumulate_gradient(
        &self,
        features: &[LocalFeature],
        scale: impl FnOnce(f64) -> f64,
        grads: &mut FactorGradients,
        ws: &mut Workspace,
    ) -> Result<f64> {
        self.project_all(features, &mut ws.projections);
        Self::prefix_suffix(ws);
        let r = self.rank;
        let value: f64 = ws.prefix[features.len() * r..].iter().sum();
        if !value.is_finite() {
            return Err(Error::NumericRange(format!(
                "prediction is not finite ({value})"
            )));
        }
        let scale = scale(value);
        if scale == 0.0 {
            return Ok(value);
        }
        for (n, phi) in features.iter().enumerate() {
            let left = &ws.prefix[n * r..(n + 1) * r];
            let right = &ws.suffix[(n + 1) * r..(n + 2) * r];
            for ((c, l), rt) in ws.coeffs.iter_mut().zip(left).zip(right) {
                *c = l * rt;
            }
            phi.add_outer(&mut grads.0[n], &ws.coeffs, scale);
        }
        Ok(value)
    }

    /// `∂f/∂A^(n) = φ(x_n) (⊛_{k≠n} φ(x_k)^T A^(k))` for all `n`.
    pub fn prediction_gradient(&self, x: &[f64]) -> Result<FactorGradients> {
        let features = self.map_spec.map_row(x)?;
        let mut grads = FactorGradients::zeros_like(self);
        self.accumulate_gradient(&features, |_| 1.0, &mut grads, &mut Workspace::new(self))?;
        Ok(grads)
    }

    /// Division-based variant: forms `p = ⊛_n m_n` once and uses `p ⊘ m_n`.
    /// Returns `None` when some `|m_n[r]| <= DIVISION_SAFETY_THRESHOLD`.
    pub fn prediction_gradient_by_division(&self, x: &[f64]) -> Result<Option<FactorGradients>> {
        let features = self.map_spec.map_row(x)?;
        let mut proj = Projections::new(self.n_features(), self.rank);
        self.project_all(&features, &mut proj);
        if proj.m.iter().any(|v| v.abs() <= DIVISION_SAFETY_THRESHOLD) {
            return Ok(None);
        }
        let mut product = vec![1.0; self.rank];
        for n in 0..self.n_features() {
            for (p, m) in product.iter_mut().zip(proj.get(n)) {
                *p *= m;
            }
        }
        let mut grads = FactorGradients::zeros_like(self);
        let mut coeffs = vec![0.0; self.rank];
        for (n, phi) in features.iter().enumerate() {
            for ((c, p), m) in coeffs.iter_mut().zip(&product).zip(proj.get(n)) {
                *c = p / m;
            }
            phi.add_outer(&mut grads.0[n], &coeffs, 1.0);
        }
        Ok(Some(grads))
    }

    /// Weight-tensor entry `W[i_1, ..., i_N] = (⊛_n A^(n)[i_n, :]) 1`, with
    /// zero-based indices. Costs `O(N R)`.
    pub fn extract_coefficient(&self, indices: &[usize]) -> Result<f64> {
        if indices.len() != self.n_features() {
            return Err(Error::Input(format!(
                "{} indices for {} features",
                indices.len(),
                self.n_features()
            )));
        }
        let mut acc = vec![1.0; self.rank];
        for (n, (&i, a)) in indices.iter().zip(&self.factors).enumerate() {
            if i >= a.rows() {
                return Err(Error::Input(format!(
                    "index {i} out of range for feature {n} with local dimension {}",
                    a.rows()
                )));
            }
            for (x, v) in acc.iter_mut().zip(a.row(i)) {
                *x *= v;
            }
        }
        Ok(acc.iter().sum())
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: FORMAT_VERSION,
            map_kind: self.map_spec.kind(),
            local_dims: self.map_spec.local_dims().to_vec(),
            rank: self.rank,
            factors: self.factors.iter().map(|a| a.as_slice().to_vec()).collect(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported format_version {} (this build reads {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let map_spec = FeatureMapSpec::new(doc.map_kind, doc.local_dims)?;
        if doc.rank == 0 {
            return Err(Error::Validation("rank must be at least 1".into()));
        }
        if doc.factors.len() != map_spec.n_features() {
            return Err(Error::Validation(format!(
                "{} factors listed for {} features",
                doc.factors.len(),
                map_spec.n_features()
            )));
        }
        let factors = doc
            .factors
            .into_iter()
            .enumerate()
            .map(|(n, data)| {
                let rows = map_spec.local_dim(n);
                if data.len() != rows * doc.rank {
                    return Err(Error::Validation(format!(
                        "factor {n} holds {} values, expected {rows} x {} = {}",
                        data.len(),
                        doc.rank,
                        rows * doc.rank
                    )));
                }
                Matrix::from_vec(rows, doc.rank, data)
                    .map_err(|e| Error::Validation(format!("factor {n}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CpModel::new(factors, map_spec)
    }

    pub fn save(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(&self.to_document()).expect("model document serializes");
        text.push('\n');
        text
    }

    pub fn load(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        CpModel::from_document(doc)
    }

    pub fn save_to_path(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.save()).map_err(|e| Error::io(path, e))
    }

    pub fn load_from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CpModel::load(&text)
    }
}

/// On-disk model layout. Factors are stored row-major, one flat array each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub map_kind: MapKind,
    pub local_dims: Vec<usize>,
    pub rank: usize,
    pub factors: Vec<Vec<f64>>,
}

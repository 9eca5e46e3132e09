//! Losses, metrics, optimizers, initialization and the mini-batch loop.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature_map::{FeatureMapSpec, LocalFeature, MapKind};
use crate::linalg::Matrix;
use crate::model::{CpModel, FactorGradients, Workspace};
use crate::regularizer::Regularizer;

const NORMAL_EQUATION_DAMPING: f64 = 1e-8;
const LOGISTIC_GRADIENT_TOL: f64 = 1e-6;
const LOGISTIC_MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    Mse,
    LogisticBce,
}

impl Loss {
    /// Per-sample loss for prediction `f` (a logit for BCE) and target `y`.
    pub fn value(self, f: f64, y: f64) -> f64 {
        match self {
            Loss::Mse => (f - y) * (f - y),
            Loss::LogisticBce => f.max(0.0) - y * f + (-f.abs()).exp().ln_1p(),
        }
    }

    /// Derivative of [`Loss::value`] with respect to `f`.
    pub fn derivative(self, f: f64, y: f64) -> f64 {
        match self {
            Loss::Mse => 2.0 * (f - y),
            Loss::LogisticBce => sigmoid(f) - y,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Loss::Mse => "mse",
            Loss::LogisticBce => "bce",
        }
    }
}

pub fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let Optimizer::Adam { beta1, beta2, eps, .. } = *self {
            for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::Config(format!("Adam {name} must lie in [0, 1), got {b}")));
                }
            }
            if eps.is_nan() || eps <= 0.0 {
                return Err(Error::Config(format!("Adam eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

/// Per-run state for an [`Optimizer`].
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    first: Option<FactorGradients>,
    second: Option<FactorGradients>,
    step: u32,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, model: &CpModel) -> Self {
        let moments = matches!(optimizer, Optimizer::Adam { .. });
        OptimizerState {
            optimizer,
            first: moments.then(|| FactorGradients::zeros_like(model)),
            second: moments.then(|| FactorGradients::zeros_like(model)),
            step: 0,
        }
    }

    /// Applies one descent step to `model` in place.
    pub fn apply(&mut self, model: &mut CpModel, grads: &FactorGradients) {
        self.step += 1;
        match self.optimizer {
            Optimizer::Sgd { lr } => {
                for (a, g) in model.factors_mut().iter_mut().zip(grads.matrices()) {
                    for (p, gi) in a.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *p -= lr * gi;
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let first = self.first.as_mut().expect("Adam state");
                let second = self.second.as_mut().expect("Adam state");
                let blocks = model
                    .factors_mut()
                    .iter_mut()
                    .zip(grads.matrices())
                    .zip(first.matrices_mut().iter_mut().zip(second.matrices_mut()));
                for ((a, g), (m, v)) in blocks {
                    let params = a.as_mut_slice().iter_mut().zip(g.as_slice());
                    let moments = m.as_mut_slice().iter_mut().zip(v.as_mut_slice());
                    for ((p, &gi), (mi, vi)) in params.zip(moments) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    RandomGaussian { sigma: f64 },
    LinearModel,
}

impl Default for Init {
    fn default() -> Self {
        Init::RandomGaussian { sigma: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Metric {
    #[default]
    Mse,
    Auc,
    /// Fraction of samples where `prediction >= threshold` agrees with a
    /// positive label (`y >= 0.5`).
    Accuracy { threshold: f64 },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Auc => "auc",
            Metric::Accuracy { .. } => "accuracy",
        }
    }

    pub fn higher_is_better(&self) -> bool {
        !matches!(self, Metric::Mse)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rank: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub regularizer: Regularizer,
    pub init: Init,
    pub seed: u64,
    pub shuffle: bool,
    /// Metric recorded on the validation split after every epoch.
    pub metric: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rank: 10,
            epochs: 100,
            batch_size: 32,
            optimizer: Optimizer::default(),
            loss: Loss::Mse,
            regularizer: Regularizer::None,
            init: Init::default(),
            seed: 0,
            shuffle: true,
            metric: Metric::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.regularizer.validate()?;
        if let Init::RandomGaussian { sigma } = self.init {
            check_sigma(sigma)?;
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("initialization sigma must be positive, got {sigma}")))
    }
}

/// Linear model over the non-constant local features.
///
/// `weights[n][j]` multiplies row `j + 1` of `φ(x_n)`: the monomial
/// `x_n^(j+1)` for polynomial maps, the indicator of category `j` for
/// categorical maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub bias: f64,
    pub weights: Vec<Vec<f64>>,
}

impl LinearSolution {
    pub fn zeros(map_spec: &FeatureMapSpec) -> Self {
        LinearSolution {
            bias: 0.0,
            weights: map_spec.local_dims().iter().map(|d| vec![0.0; d - 1]).collect(),
        }
    }

    /// Direct evaluation `b + sum_{n,j} w_{n,j} ψ_j(x_n)`.
    pub fn predict(&self, map_spec: &FeatureMapSpec, row: &[f64]) -> Result<f64> {
        let mut acc = self.bias;
        for (col, value) in linear_terms(map_spec, row)? {
            let (n, j) = col;
            if let Some(w) = self.weights.get(n).and_then(|w| w.get(j)) {
                acc += w * value;
            }
        }
        Ok(acc)
    }

    fn check(&self, map_spec: &FeatureMapSpec) -> Result<()> {
        if self.weights.len() != map_spec.n_features() {
            return Err(Error::Validation(format!(
                "linear solution has {} features, map has {}",
                self.weights.len(),
                map_spec.n_features()
            )));
        }
        for (n, w) in self.weights.iter().enumerate() {
            if w.len() >= map_spec.local_dim(n) {
                return Err(Error::Validation(format!(
                    "feature {n} has {} linear weights, map allows {}",
                    w.len(),
                    map_spec.local_dim(n) - 1
                )));
            }
        }
        if !self.bias.is_finite() || self.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Validation("linear solution has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Nonzero non-constant terms `((n, j), ψ_j(x_n))` of one row.
fn linear_terms(map_spec: &FeatureMapSpec, row: &[f64]) -> Result<Vec<((usize, usize), f64)>> {
    map_spec.check_row(row)?;
    let mut out = Vec::new();
    for (n, &x) in row.iter().enumerate() {
        match map_spec.kind() {
            MapKind::Categorical => out.push(((n, x as usize), 1.0)),
            MapKind::Polynomial | MapKind::NormalizedPolynomial => {
                let mut p = 1.0;
                for j in 0..map_spec.local_dim(n) - 1 {
                    p *= x;
                    out.push(((n, j), p));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub metric: Metric,
    pub initial_val_loss: Option<f64>,
    pub initial_val_metric: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl FitReport {
    /// Best validation metric over the initial model and all epochs.
    pub fn best_val_metric(&self) -> Option<f64> {
        let values = self
            .initial_val_metric
            .into_iter()
            .chain(self.epochs.iter().filter_map(|e| e.val_metric));
        if self.metric.higher_is_better() {
            values.reduce(f64::max)
        } else {
            values.reduce(f64::min)
        }
    }

    pub fn final_val_metric(&self) -> Option<f64> {
        self.epochs
            .last()
            .and_then(|e| e.val_metric)
            .or(self.initial_val_metric)
    }

    /// One row per completed epoch:
    /// `epoch,train_loss,val_loss,val_<metric>,seconds`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        let mut out = format!("epoch,train_loss,val_loss,val_{},seconds\n", self.metric.name());
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                opt(e.val_loss),
                opt(e.val_metric),
                e.seconds
            ));
        }
        out
    }
}

/// Every factor entry drawn i.i.d. from `N(0, sigma^2)`.
pub fn init_random(map_spec: &FeatureMapSpec, rank: usize, sigma: f64, seed: u64) -> Result<CpModel> {
    check_sigma(sigma)?;
    if rank == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = map_spec
        .local_dims()
        .iter()
        .map(|&d| {
            let data = (0..d * rank).map(|_| normal.sample(&mut rng)).collect();
            Matrix::from_vec(d, rank, data)
        })
        .collect::<Result<Vec<_>>>()?;
    CpModel::new(factors, map_spec.clone())
}

/// CP model whose prediction equals the linear model exactly.
///
/// Column `n` of `A^(n)` carries `[b/N, w_n]`; the other first `N` columns of
/// `A^(n)` are `e_1`, and all remaining columns are zero. Interactions of two
/// or more non-constant terms therefore vanish.
pub fn init_linear(lin: &LinearSolution, map_spec: &FeatureMapSpec, rank: usize) -> Result<CpModel> {
    let n_features = map_spec.n_features();
    if rank < n_features {
        return Err(Error::Config(format!(
            "linear initialization needs rank >= number of features ({n_features}), got rank {rank}"
        )));
    }
    if map_spec.kind() == MapKind::NormalizedPolynomial {
        return Err(Error::Config(
            "linear initialization requires a feature map whose first entry is 1; \
             use the plain polynomial or categorical map"
                .into(),
        ));
    }
    lin.check(map_spec)?;
    let bias_share = lin.bias / n_features as f64;
    let factors = (0..n_features)
        .map(|n| {
            let mut a = Matrix::zeros(map_spec.local_dim(n), rank);
            for r in 0..n_features {
                a[(0, r)] = if r == n { bias_share } else { 1.0 };
            }
            for (j, &w) in lin.weights[n].iter().enumerate() {
                a[(j + 1, n)] = w;
            }
            a
        })
        .collect();
    CpModel::new(factors, map_spec.clone())
}

/// Least squares (MSE) or logistic regression on the non-constant local
/// features of `map_spec`.
pub fn fit_linear_baseline(data: &Dataset, loss: Loss, map_spec: &FeatureMapSpec) -> Result<LinearSolution> {
    if data.is_empty() {
        return Err(Error::Input("cannot fit a linear model to an empty dataset".into()));
    }
    // Column 0 is the bias; feature n, weight j sits at offsets[n] + j.
    let mut offsets = Vec::with_capacity(map_spec.n_features());
    let mut p = 1;
    for &d in map_spec.local_dims() {
        offsets.push(p);
        p += d - 1;
    }
    let rows: Vec<Vec<(usize, f64)>> = data
        .rows()
        .enumerate()
        .map(|(i, row)| {
            let terms = linear_terms(map_spec, row).map_err(|e| e.at_row(i))?;
            let mut sparse = vec![(0, 1.0)];
            sparse.extend(terms.into_iter().map(|((n, j), v)| (offsets[n] + j, v)));
            Ok(sparse)
        })
        .collect::<Result<_>>()?;

    let theta = match loss {
        Loss::Mse => solve_least_squares(&rows, data.targets(), p)?,
        Loss::LogisticBce => solve_logistic(&rows, data.targets(), p)?,
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("linear baseline produced non-finite weights".into()));
    }
    Ok(LinearSolution {
        bias: theta[0],
        weights: map_spec
            .local_dims()
            .iter()
            .zip(&offsets)
            .map(|(&d, &o)| theta[o..o + d - 1].to_vec())
            .collect(),
    })
}

fn gram(rows: &[Vec<(usize, f64)>], p: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(p, p);
    for row in rows {
        for &(i, vi) in row {
            for &(j, vj) in row {
                g[(i, j)] += vi * vj;
            }
        }
    }
    g
}

fn solve_least_squares(rows: &[Vec<(usize, f64)>], y: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut g = gram(rows, p);
    for i in 0..p {
        g[(i, i)] += NORMAL_EQUATION_DAMPING;
    }
    let mut rhs = DVector::zeros(p);
    for (row, &t) in rows.iter().zip(y) {
        for &(i, v) in row {
            rhs[i] += v * t;
        }
    }
    let chol = g.cholesky().ok_or_else(|| {
        Error::Numeric("normal equations are singular even after damping".into())
    })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn solve_logistic(rows: &[Vec<(usize, f64)>], y: &[f64], p: usize) -> Result<Vec<f64>> {
    let n = rows.len() as f64;
    // Step 1/L with L = λ_max(X^T X) / (4n), the Lipschitz constant of the
    // mean logistic loss gradient.
    let g = gram(rows, p) / n;
    let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = &g * &v;
        lambda = w.norm();
        if lambda == 0.0 {
            break;
        }
        v = w / lambda;
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Numeric("logistic baseline: degenerate design matrix".into()));
    }
    let step = 4.0 / (lambda * 1.01);
    let mut theta = vec![0.0; p];
    let mut grad = vec![0.0; p];
    for _ in 0..LOGISTIC_MAX_ITERATIONS {
        grad.fill(0.0);
        for (row, &t) in rows.iter().zip(y) {
            let f: f64 = row.iter().map(|&(i, v)| theta[i] * v).sum();
            let r = (sigmoid(f) - t) / n;
            for &(i, v) in row {
                grad[i] += r * v;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric("logistic baseline: gradient is not finite".into()));
        }
        if norm <= LOGISTIC_GRADIENT_TOL {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
    }
    Ok(theta)
}

/// Starting model for `config.init`; linear initialization fits the baseline
/// on `train` first.
pub fn initialize(map_spec: &FeatureMapSpec, train: &Dataset, config: &TrainConfig) -> Result<CpModel> {
    match config.init {
        Init::RandomGaussian { sigma } => init_random(map_spec, config.rank, sigma, config.seed),
        Init::LinearModel => {
            let lin = fit_linear_baseline(train, config.loss, map_spec)?;
            init_linear(&lin, map_spec, config.rank)
        }
    }
}

/// Polynomial or normalized map of local dimension `d` for an all-dense
/// dataset, or the categorical map for an all-categorical one.
pub fn map_spec_for(data: &Dataset, kind: MapKind, d: usize) -> Result<FeatureMapSpec> {
    let schema = data.schema();
    match kind {
        MapKind::Categorical => {
            let cards = schema.cardinalities().ok_or_else(|| {
                Error::Config("the categorical map needs every feature column to be categorical".into())
            })?;
            FeatureMapSpec::categorical(&cards)
        }
        MapKind::Polynomial | MapKind::NormalizedPolynomial => {
            if !schema.all_dense() {
                return Err(Error::Config(format!(
                    "the {kind} map needs every feature column to be numeric; \
                     use the categorical map for categorical data"
                )));
            }
            FeatureMapSpec::new(kind, vec![d; data.n_features()]).map_err(|e| match e {
                Error::Input(m) => Error::Config(m),
                other => other,
            })
        }
    }
}

fn map_dataset(map_spec: &FeatureMapSpec, data: &Dataset) -> Result<Vec<Vec<LocalFeature>>> {
    data.rows()
        .enumerate()
        .map(|(i, row)| map_spec.map_row(row).map_err(|e| e.at_row(i)))
        .collect()
}

/// Mean data loss plus penalty over `indices`, and its gradient.
///
/// This is the per-batch objective the fitting loop descends.
pub fn batch_objective(
    model: &CpModel,
    data: &Dataset,
    indices: &[usize],
    loss: Loss,
    regularizer: &Regularizer,
) -> Result<(f64, FactorGradients)> {
    let mapped = map_dataset(model.map_spec(), data)?;
    let mut grads = FactorGradients::zeros_like(model);
    let mut ws = Workspace::new(model);
    let value = batch_step(model, &mapped, data.targets(), indices, loss, regularizer, &mut grads, &mut ws)?;
    Ok((value, grads))
}

#[allow(clippy::too_many_arguments)]
fn batch_step(
    model: &CpModel,
    mapped: &[Vec<LocalFeature>],
    targets: &[f64],
    indices: &[usize],
    loss: Loss,
    regularizer: &Regularizer,
    grads: &mut FactorGradients,
    ws: &mut Workspace,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    grads.fill_zero();
    let inv = 1.0 / indices.len() as f64;
    let mut total = 0.0;
    for &i in indices {
        let y = targets[i];
        let f = model.accumulate_gradient(&mapped[i], |f| inv * loss.derivative(f, y), grads, ws)?;
        total += loss.value(f, y);
    }
    let mut value = total * inv;
    if !regularizer.is_none() {
        value += regularizer.penalty(model)?;
        regularizer.add_gradient(model, grads)?;
    }
    Ok(value)
}

/// Mini-batch training of `model` on `train`.
///
/// Each step descends `(1/S) sum loss(f(x), y) + penalty` over a batch of `S`
/// samples. With `shuffle` the sample order is redrawn every epoch from a
/// stream derived from `config.seed`.
pub fn fit(
    model: CpModel,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(CpModel, FitReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if train.n_features() != model.n_features() {
        return Err(Error::Dimension(format!(
            "model has {} features, training data has {}",
            model.n_features(),
            train.n_features()
        )));
    }
    let mut model = model;
    let mut report = FitReport {
        metric: config.metric,
        ..FitReport::default()
    };
    if let Some(val) = validation {
        report.initial_val_loss = Some(mean_loss(&model, val, config.loss)?);
        report.initial_val_metric = Some(evaluate(&model, val, config.metric)?);
    }
    if config.epochs == 0 {
        return Ok((model, report));
    }

    let mapped = map_dataset(model.map_spec(), train)?;
    let targets = train.targets();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut state = OptimizerState::new(config.optimizer, &model);
    let mut grads = FactorGradients::zeros_like(&model);
    let mut ws = Workspace::new(&model);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut weighted = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let diverged = |loss: f64| Error::Divergence {
                epoch,
                batch: b + 1,
                loss,
            };
            let value = match batch_step(&model, &mapped, targets, batch, config.loss, &config.regularizer, &mut grads, &mut ws) {
                Ok(v) => v,
                Err(Error::NumericRange(_)) => return Err(diverged(f64::INFINITY)),
                Err(e) => return Err(e),
            };
            if !value.is_finite() {
                return Err(diverged(value));
            }
            if !grads.is_finite() {
                return Err(diverged(f64::NAN));
            }
            state.apply(&mut model, &grads);
            if !model.factors().iter().all(Matrix::is_finite) {
                return Err(diverged(f64::NAN));
            }
            weighted += value * batch.len() as f64;
        }
        let seconds = start.elapsed().as_secs_f64();
        let (val_loss, val_metric) = match validation {
            Some(val) => (
                Some(mean_loss(&model, val, config.loss)?),
                Some(evaluate(&model, val, config.metric)?),
            ),
            None => (None, None),
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: weighted / train.len() as f64,
            val_loss,
            val_metric,
            seconds,
        });
    }
    Ok((model, report))
}

fn predictions(model: &CpModel, data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let mut ws = Workspace::new(model);
    data.rows()
        .enumerate()
        .map(|(i, row)| {
            let features = model.map_spec().map_row(row).map_err(|e| e.at_row(i))?;
            model.predict_mapped(&features, &mut ws).map_err(|e| e.at_row(i))
        })
        .collect()
}

/// Mean per-sample loss, without any penalty.
pub fn mean_loss(model: &CpModel, data: &Dataset, loss: Loss) -> Result<f64> {
    let preds = predictions(model, data)?;
    let total: f64 = preds
        .iter()
        .zip(data.targets())
        .map(|(&f, &y)| loss.value(f, y))
        .sum();
    Ok(total / preds.len() as f64)
}

pub fn evaluate(model: &CpModel, data: &Dataset, metric: Metric) -> Result<f64> {
    let preds = predictions(model, data)?;
    score(&preds, data.targets(), metric)
}

/// Metric of raw scores against targets.
pub fn score(preds: &[f64], targets: &[f64], metric: Metric) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len() as f64;
    match metric {
        Metric::Mse => Ok(preds
            .iter()
            .zip(targets)
            .map(|(f, y)| (f - y) * (f - y))
            .sum::<f64>()
            / n),
        Metric::Auc => auc(preds, targets),
        Metric::Accuracy { threshold } => Ok(preds
            .iter()
            .zip(targets)
            .filter(|(&f, &y)| (f >= threshold) == (y >= 0.5))
            .count() as f64
            / n),
    }
}

/// Mann–Whitney estimate of `P(score_pos > score_neg)`, ties counted half.
/// Labels `y >= 0.5` are positive.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] >= 0.5 {
                positive_rank_sum += rank;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&y| y >= 0.5).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    Ok((positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, ColumnKind, Schema};
    use crate::oracle::finite_difference;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_rows(n: usize, features: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| (0..features).map(|_| r.random_range(-1.5..1.5)).collect())
            .collect()
    }

    #[test]
    fn losses() {
        assert_eq!(Loss::Mse.value(3.0, 1.0), 4.0);
        assert_eq!(Loss::Mse.derivative(3.0, 1.0), 4.0);
        let f = 0.7;
        let direct = -(sigmoid(f).ln());
        assert!((Loss::LogisticBce.value(f, 1.0) - direct).abs() < 1e-14);
        assert!(Loss::LogisticBce.value(800.0, 0.0).is_finite());
        assert!((Loss::LogisticBce.value(-800.0, 0.0)).abs() < 1e-300);
        let h = 1e-6;
        let fd = (Loss::LogisticBce.value(f + h, 0.3) - Loss::LogisticBce.value(f - h, 0.3)) / (2.0 * h);
        assert!((fd - Loss::LogisticBce.derivative(f, 0.3)).abs() < 1e-9);
    }

    #[test]
    fn random_init_is_deterministic_and_gaussian() {
        let spec = FeatureMapSpec::polynomial(5, 4).unwrap();
        let a = init_random(&spec, 500, 0.2, 11).unwrap();
        let b = init_random(&spec, 500, 0.2, 11).unwrap();
        let c = init_random(&spec, 500, 0.2, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let entries: Vec<f64> = a.factors().iter().flat_map(|m| m.as_slice().to_vec()).collect();
        assert_eq!(entries.len(), 10_000);
        let n = entries.len() as f64;
        let mean = entries.iter().sum::<f64>() / n;
        let std = (entries.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 4.0 * 0.2 / n.sqrt());
        assert!((std - 0.2).abs() <= 0.05 * 0.2);
        assert!(init_random(&spec, 3, 0.0, 0).is_err());
    }

    #[test]
    fn linear_init_zero_and_bias_example() {
        let spec = FeatureMapSpec::polynomial(3, 2).unwrap();
        let zero = init_linear(&LinearSolution::zeros(&spec), &spec, 3).unwrap();
        assert_eq!(zero.predict(&[0.4, -2.0, 9.0]).unwrap(), 0.0);

        let lin = LinearSolution {
            bias: 6.0,
            weights: vec![vec![1.5], vec![-2.0], vec![0.25]],
        };
        let m = init_linear(&lin, &spec, 3).unwrap();
        assert!((m.predict(&[0.0, 0.0, 0.0]).unwrap() - 6.0).abs() < 1e-12);
        let x = [0.3, -1.2, 4.0];
        let expected = 6.0 + 1.5 * 0.3 + 2.0 * 1.2 + 0.25 * 4.0;
        assert!((m.predict(&x).unwrap() - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
        // First rows of the factors multiply out to the bias.
        let first: Vec<f64> = (0..3)
            .map(|r| (0..3).map(|n| m.factor(n)[(0, r)]).product())
            .collect();
        assert!((first.iter().sum::<f64>() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn linear_init_matches_direct_formula() {
        let mut r = rng(3);
        for (n, d) in [(4, 3), (6, 4), (2, 2)] {
            let spec = FeatureMapSpec::polynomial(n, d).unwrap();
            let lin = LinearSolution {
                bias: r.random_range(-2.0..2.0),
                weights: (0..n)
                    .map(|_| (0..d - 1).map(|_| r.random_range(-2.0..2.0)).collect())
                    .collect(),
            };
            let m = init_linear(&lin, &spec, n + 2).unwrap();
            for x in random_rows(100, n, 5) {
                let cp = m.predict(&x).unwrap();
                let direct = lin.predict(&spec, &x).unwrap();
                assert!((cp - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
            }
            // Interactions with two or more non-constant terms vanish.
            let mut idx = vec![0; n];
            idx[0] = 1;
            idx[n - 1] = d - 1;
            assert!(m.extract_coefficient(&idx).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_init_categorical() {
        let spec = FeatureMapSpec::categorical(&[3, 2, 4]).unwrap();
        let lin = LinearSolution {
            bias: 0.5,
            weights: vec![vec![1.0, -1.0, 2.0], vec![0.1, 0.2], vec![3.0, 0.0, -3.0, 1.0]],
        };
        let m = init_linear(&lin, &spec, 3).unwrap();
        for x in [[0.0, 0.0, 0.0], [2.0, 1.0, 3.0], [1.0, 0.0, 2.0]] {
            let direct = lin.predict(&spec, &x).unwrap();
            assert!((m.predict(&x).unwrap() - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn linear_init_errors() {
        let spec = FeatureMapSpec::polynomial(3, 2).unwrap();
        let err = init_linear(&LinearSolution::zeros(&spec), &spec, 2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("rank"));
        let norm = FeatureMapSpec::normalized_polynomial(3, 2).unwrap();
        assert!(matches!(
            init_linear(&LinearSolution::zeros(&norm), &norm, 3),
            Err(Error::Config(_))
        ));
        let short = LinearSolution {
            bias: 0.0,
            weights: vec![vec![]; 3],
        };
        assert!(init_linear(&short, &spec, 3).is_ok());
    }

    #[test]
    fn baseline_recovers_linear_truth() {
        let rows = random_rows(200, 3, 9);
        let y: Vec<f64> = rows.iter().map(|x| 0.7 + 2.0 * x[0] - x[1] + 0.5 * x[2]).collect();
        let data = Dataset::dense(&rows, y).unwrap();
        let spec = FeatureMapSpec::polynomial(3, 2).unwrap();
        let lin = fit_linear_baseline(&data, Loss::Mse, &spec).unwrap();
        assert!((lin.bias - 0.7).abs() < 1e-6);
        for (w, t) in lin.weights.iter().zip([2.0, -1.0, 0.5]) {
            assert!((w[0] - t).abs() < 1e-6);
        }
    }

    #[test]
    fn baseline_constant_and_interpolation() {
        let rows = random_rows(50, 2, 1);
        let data = Dataset::dense(&rows, vec![3.25; 50]).unwrap();
        let lin = fit_linear_baseline(&data, Loss::Mse, &FeatureMapSpec::polynomial(2, 3).unwrap()).unwrap();
        assert!((lin.bias - 3.25).abs() < 1e-6);
        assert!(lin.weights.iter().flatten().all(|w| w.abs() < 1e-6));

        let data = Dataset::dense(&[[1.0], [3.0]], vec![2.0, 6.0]).unwrap();
        let lin = fit_linear_baseline(&data, Loss::Mse, &FeatureMapSpec::polynomial(1, 2).unwrap()).unwrap();
        assert!(lin.bias.abs() < 1e-6);
        assert!((lin.weights[0][0] - 2.0).abs() < 1e-6);
        assert!(matches!(
            fit_linear_baseline(&data.select(&[]), Loss::Mse, &FeatureMapSpec::polynomial(1, 2).unwrap()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn logistic_baseline_reaches_stationarity() {
        let rows = random_rows(300, 2, 4);
        let mut r = rng(8);
        let y: Vec<f64> = rows
            .iter()
            .map(|x| {
                let p = sigmoid(0.5 + x[0] - 2.0 * x[1]);
                f64::from(r.random_bool(p))
            })
            .collect();
        let data = Dataset::dense(&rows, y).unwrap();
        let spec = FeatureMapSpec::polynomial(2, 2).unwrap();
        let lin = fit_linear_baseline(&data, Loss::LogisticBce, &spec).unwrap();
        let theta = vec![lin.bias, lin.weights[0][0], lin.weights[1][0]];
        let objective = |t: &[f64]| {
            rows.iter()
                .zip(data.targets())
                .map(|(x, &y)| Loss::LogisticBce.value(t[0] + t[1] * x[0] + t[2] * x[1], y))
                .sum::<f64>()
                / rows.len() as f64
        };
        let g = crate::oracle::finite_difference_vec(objective, &theta, None).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-5);
        assert!(lin.weights[1][0] < 0.0 && lin.weights[0][0] > 0.0);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let rows = random_rows(20, 2, 2);
        let data = Dataset::dense(&rows, vec![1.0; 20]).unwrap();
        let spec = FeatureMapSpec::polynomial(2, 3).unwrap();
        let m = init_random(&spec, 3, 0.2, 7).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, report) = fit(m.clone(), &data, Some(&data), &cfg).unwrap();
        assert_eq!(out, m);
        assert!(report.epochs.is_empty());
        assert!(report.initial_val_loss.is_some());
    }

    #[test]
    fn memorizes_single_sample() {
        let data = Dataset::dense(&[[0.4, -0.3]], vec![1.7]).unwrap();
        let spec = FeatureMapSpec::polynomial(2, 3).unwrap();
        let m = init_random(&spec, 3, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            rank: 3,
            epochs: 3000,
            optimizer: Optimizer::adam(1e-2),
            ..TrainConfig::default()
        };
        let (out, report) = fit(m, &data, None, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 3000);
        assert!(mean_loss(&out, &data, Loss::Mse).unwrap() <= 1e-6);
    }

    #[test]
    fn training_is_deterministic() {
        let rows = random_rows(100, 3, 6);
        let y: Vec<f64> = rows.iter().map(|x| x[0] * x[1] - x[2]).collect();
        let data = Dataset::dense(&rows, y).unwrap();
        let spec = FeatureMapSpec::polynomial(3, 2).unwrap();
        let cfg = TrainConfig {
            rank: 4,
            epochs: 5,
            regularizer: Regularizer::L2 { alpha: 1e-3 },
            ..TrainConfig::default()
        };
        let run = || fit(init_random(&spec, 4, 0.2, 3).unwrap(), &data, Some(&data), &cfg).unwrap();
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(
            ra.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>(),
            rb.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>()
        );
    }

    #[test]
    fn linear_init_starts_at_noise_floor() {
        let mut r = rng(21);
        let rows = random_rows(1500, 3, 22);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|x| 0.2 + x[0] - 0.5 * x[1] + 0.8 * x[2] + noise.sample(&mut r))
            .collect();
        let data = Dataset::dense(&rows, y).unwrap();
        let train = data.select(&(0..1000).collect::<Vec<_>>());
        let val = data.select(&(1000..1500).collect::<Vec<_>>());
        let spec = FeatureMapSpec::polynomial(3, 2).unwrap();
        let cfg = TrainConfig {
            rank: 3,
            epochs: 10,
            init: Init::LinearModel,
            ..TrainConfig::default()
        };
        let m = initialize(&spec, &train, &cfg).unwrap();
        let (_, report) = fit(m, &train, Some(&val), &cfg).unwrap();
        let start = report.initial_val_metric.unwrap();
        assert!((start - 0.09).abs() < 0.02, "epoch-0 val MSE {start}");
        let end = report.final_val_metric().unwrap();
        assert!(end <= 1.05 * start, "{end} vs {start}");
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let rows = random_rows(15, 3, 30);
        let y: Vec<f64> = rows.iter().map(|x| x[0] - x[1] * x[2]).collect();
        let data = Dataset::dense(&rows, y).unwrap();
        let spec = FeatureMapSpec::polynomial(3, 3).unwrap();
        let m = init_random(&spec, 2, 0.5, 4).unwrap();
        let all: Vec<usize> = (0..15).collect();
        for reg in [
            Regularizer::None,
            Regularizer::L2 { alpha: 0.1 },
            Regularizer::Order { alpha: 0.05, beta: 2.0 },
        ] {
            for loss in [Loss::Mse, Loss::LogisticBce] {
                let targets = if loss == Loss::Mse { data.clone() } else { data.map_targets(|t| f64::from(t > 0.0)) };
                let (_, g) = batch_objective(&m, &targets, &all, loss, &reg).unwrap();
                let fd = finite_difference(
                    |p| Ok(batch_objective(p, &targets, &all, loss, &reg)?.0),
                    &m,
                    None,
                )
                .unwrap();
                for (a, b) in g.matrices().iter().zip(fd.matrices()) {
                    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                        assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn sgd_step_is_first_order() {
        let rows = random_rows(10, 2, 40);
        let data = Dataset::dense(&rows, rows.iter().map(|x| x[0]).collect()).unwrap();
        let spec = FeatureMapSpec::polynomial(2, 3).unwrap();
        let m = init_random(&spec, 3, 0.3, 5).unwrap();
        let lr = 1e-8;
        let cfg = TrainConfig {
            rank: 3,
            epochs: 1,
            batch_size: 10,
            optimizer: Optimizer::Sgd { lr },
            shuffle: false,
            ..TrainConfig::default()
        };
        let (after, _) = fit(m.clone(), &data, None, &cfg).unwrap();
        let (_, g) = batch_objective(&m, &data, &(0..10).collect::<Vec<_>>(), Loss::Mse, &Regularizer::None).unwrap();
        for n in 0..2 {
            let moved = after.factor(n).as_slice().iter().zip(m.factor(n).as_slice());
            for ((a, b), gi) in moved.zip(g.get(n).as_slice()) {
                // Rounding of the parameters themselves bounds the agreement.
                let ulp = 4.0 * f64::EPSILON * b.abs().max(1.0);
                assert!(((b - a) - lr * gi).abs() <= ulp, "{} vs {}", b - a, lr * gi);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let rows = random_rows(64, 2, 50);
        let data = Dataset::dense(&rows, vec![1e3; 64]).unwrap();
        let spec = FeatureMapSpec::polynomial(2, 4).unwrap();
        let m = init_random(&spec, 3, 1.0, 5).unwrap();
        let cfg = TrainConfig {
            rank: 3,
            epochs: 50,
            optimizer: Optimizer::Sgd { lr: 10.0 },
            ..TrainConfig::default()
        };
        match fit(m, &data, None, &cfg) {
            Err(Error::Divergence { epoch, batch, .. }) => assert!(epoch >= 1 && batch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn metrics() {
        assert_eq!(score(&[1.0, 2.0], &[1.0, 2.0], Metric::Mse).unwrap(), 0.0);
        assert_eq!(auc(&[0.0, 1.0, 1.0, 0.0], &[0.0, 1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5, 0.5], &[0.0, 1.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
        assert_eq!(
            score(&[0.9, 0.2, 0.6], &[1.0, 0.0, 0.0], Metric::Accuracy { threshold: 0.5 }).unwrap(),
            2.0 / 3.0
        );
        let mut r = rng(60);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() <= 0.03);
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut r = rng(61);
        let scores: Vec<f64> = (0..60).map(|_| f64::from(r.random_range(0..8u8))).collect();
        let labels: Vec<f64> = (0..60).map(|_| f64::from(r.random_bool(0.4))).collect();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..60 {
            for j in 0..60 {
                if labels[i] == 1.0 && labels[j] == 0.0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn map_spec_for_checks_schema() {
        let dense = Dataset::dense(&[[1.0, 2.0]], vec![0.0]).unwrap();
        assert_eq!(map_spec_for(&dense, MapKind::Polynomial, 3).unwrap().local_dims(), &[3, 3]);
        assert!(matches!(map_spec_for(&dense, MapKind::Categorical, 3), Err(Error::Config(_))));
        let schema = Schema {
            columns: vec![Column {
                name: "c".into(),
                kind: ColumnKind::Categorical {
                    dictionary: vec!["a".into(), "b".into()],
                },
            }],
        };
        let cat = Dataset::from_rows(schema, &[[1.0]], vec![0.0]).unwrap();
        assert_eq!(map_spec_for(&cat, MapKind::Categorical, 0).unwrap().local_dims(), &[3]);
        assert!(matches!(map_spec_for(&cat, MapKind::Polynomial, 3), Err(Error::Config(_))));
    }
}

//! Penalties on the factor matrices.
//!
//! Order regularization penalizes `<B ⊛ W, B ⊛ W>` where `B = b_1 ∘ ... ∘ b_N`
//! grows with interaction order. With `Y_n = A^(n) ⊛ [b_n, ..., b_n]` it
//! equals `1^T (⊛_n Y_n^T Y_n) 1`, so it costs `O(N R^2 d)` and never touches
//! `W` itself.

use crate::error::{Error, Result};
use crate::feature_map::{FeatureMapSpec, MapKind};
use crate::linalg::Matrix;
use crate::model::{CpModel, FactorGradients};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularizer {
    #[default]
    None,
    /// `alpha * sum_n ||A^(n)||_F^2`
    L2 { alpha: f64 },
    /// `alpha * <B ⊛ W, B ⊛ W>` with geometric (polynomial) or flat
    /// (categorical) per-mode weights in `beta`.
    Order { alpha: f64, beta: f64 },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::None => Ok(()),
            Regularizer::L2 { alpha } => check_alpha(alpha),
            Regularizer::Order { alpha, beta } => {
                check_alpha(alpha)?;
                if !(beta > 1.0 && beta.is_finite()) {
                    return Err(Error::Config(format!(
                        "order regularization needs beta > 1, got {beta}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::L2 { alpha } | Regularizer::Order { alpha, .. } => alpha,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Regularizer::None)
    }

    pub fn penalty(&self, model: &CpModel) -> Result<f64> {
        match *self {
            Regularizer::None => Ok(0.0),
            Regularizer::L2 { alpha } => Ok(l2_penalty(model, alpha)),
            Regularizer::Order { alpha, .. } => {
                let b = b_vectors(self, model.map_spec())?;
                order_penalty(model, &b, alpha)
            }
        }
    }

    /// Adds the penalty gradient into `grads`.
    pub fn add_gradient(&self, model: &CpModel, grads: &mut FactorGradients) -> Result<()> {
        match *self {
            Regularizer::None => Ok(()),
            Regularizer::L2 { alpha } => {
                for (g, a) in grads.matrices_mut().iter_mut().zip(model.factors()) {
                    g.add_scaled(a, 2.0 * alpha)?;
                }
                Ok(())
            }
            Regularizer::Order { alpha, .. } => {
                let b = b_vectors(self, model.map_spec())?;
                let pg = order_penalty_gradient(model, &b, alpha)?;
                grads.add_scaled(&pg, 1.0)
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "regularization strength must be >= 0, got {alpha}"
        )));
    }
    Ok(())
}

/// `[1, β, β², ..., β^(d-1)]` for polynomial maps, `[1, β, ..., β]` for
/// categorical ones.
pub fn build_b_vector(reg: &Regularizer, map_spec: &FeatureMapSpec, mode: usize) -> Result<Vec<f64>> {
    let Regularizer::Order { beta, .. } = *reg else {
        return Err(Error::Usage(
            "b vectors are only defined for order regularization".into(),
        ));
    };
    reg.validate()?;
    if mode >= map_spec.n_features() {
        return Err(Error::Dimension(format!(
            "mode {mode} of a {}-feature map",
            map_spec.n_features()
        )));
    }
    let d = map_spec.local_dim(mode);
    Ok(match map_spec.kind() {
        MapKind::Polynomial | MapKind::NormalizedPolynomial => {
            std::iter::successors(Some(1.0), |p| Some(p * beta)).take(d).collect()
        }
        MapKind::Categorical => std::iter::once(1.0)
            .chain(std::iter::repeat_n(beta, d - 1))
            .collect(),
    })
}

pub fn b_vectors(reg: &Regularizer, map_spec: &FeatureMapSpec) -> Result<Vec<Vec<f64>>> {
    (0..map_spec.n_features())
        .map(|n| build_b_vector(reg, map_spec, n))
        .collect()
}

/// `Y_n = A^(n) ⊛ B_n` and its Gram matrix `Y_n^T Y_n`.
fn weighted_factors(model: &CpModel, b_vectors: &[Vec<f64>]) -> Result<Vec<(Matrix, Matrix)>> {
    if b_vectors.len() != model.n_features() {
        return Err(Error::Dimension(format!(
            "{} b vectors for {} factors",
            b_vectors.len(),
            model.n_features()
        )));
    }
    model
        .factors()
        .iter()
        .zip(b_vectors)
        .enumerate()
        .map(|(n, (a, b))| {
            if b.len() != a.rows() {
                return Err(Error::Dimension(format!(
                    "b vector {n} has length {}, factor has {} rows",
                    b.len(),
                    a.rows()
                )));
            }
            let mut y = a.clone();
            for (i, &bi) in b.iter().enumerate() {
                y.row_mut(i).iter_mut().for_each(|v| *v *= bi);
            }
            let gram = y.transpose_matmul(&y)?;
            Ok((y, gram))
        })
        .collect()
}

pub fn order_penalty(model: &CpModel, b_vectors: &[Vec<f64>], alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let weighted = weighted_factors(model, b_vectors)?;
    let r = model.rank();
    let mut p = Matrix::filled(r, r, 1.0);
    for (_, gram) in &weighted {
        p.hadamard_assign(gram);
    }
    Ok(alpha * p.sum())
}

/// `∂P/∂A^(n) = 2α B_n ⊛ (Y_n ⊛_{k≠n} Y_k^T Y_k)`, using prefix and suffix
/// Hadamard products of the Gram matrices instead of elementwise division.
pub fn order_penalty_gradient(model: &CpModel, b_vectors: &[Vec<f64>], alpha: f64) -> Result<FactorGradients> {
    if alpha == 0.0 {
        weighted_factors(model, b_vectors)?;
        return Ok(FactorGradients::zeros_like(model));
    }
    let weighted = weighted_factors(model, b_vectors)?;
    let r = model.rank();
    let n_feat = weighted.len();

    let mut suffix = vec![Matrix::filled(r, r, 1.0); n_feat + 1];
    for n in (0..n_feat).rev() {
        let mut s = suffix[n + 1].clone();
        s.hadamard_assign(&weighted[n].1);
        suffix[n] = s;
    }

    let mut prefix = Matrix::filled(r, r, 1.0);
    let mut out = Vec::with_capacity(n_feat);
    for (n, (y, gram)) in weighted.iter().enumerate() {
        let mut others = prefix.clone();
        others.hadamard_assign(&suffix[n + 1]);
        let mut g = y.matmul(&others)?;
        for (i, &bi) in b_vectors[n].iter().enumerate() {
            let w = 2.0 * alpha * bi;
            g.row_mut(i).iter_mut().for_each(|v| *v *= w);
        }
        out.push(g);
        prefix.hadamard_assign(gram);
    }
    Ok(FactorGradients::from_matrices(out))
}

pub fn l2_penalty(model: &CpModel, alpha: f64) -> f64 {
    alpha
        * model
            .factors()
            .iter()
            .map(|a| a.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
}

pub fn l2_gradient(model: &CpModel, alpha: f64) -> FactorGradients {
    FactorGradients::from_matrices(
        model.factors().iter().map(|a| a.scaled(2.0 * alpha)).collect(),
    )
}

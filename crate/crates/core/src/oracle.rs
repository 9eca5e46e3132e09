//! Brute-force references for checking the fast paths at small sizes.
//!
//! Everything here materializes the full weight tensor or perturbs one
//! parameter at a time; nothing is shared with the `O(N R d)` code paths
//! beyond the feature maps themselves.

use crate::error::{Error, Result};
use crate::feature_map::FeatureMapSpec;
use crate::linalg::{checked_volume, outer_product_chain, DenseTensor, MultiIndex};
use crate::model::{CpModel, FactorGradients};

/// A CP model expanded into its full weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedModel {
    weights: DenseTensor,
    map_spec: FeatureMapSpec,
}

impl MaterializedModel {
    pub fn weights(&self) -> &DenseTensor {
        &self.weights
    }

    pub fn map_spec(&self) -> &FeatureMapSpec {
        &self.map_spec
    }
}

/// `W[i_1..i_N] = sum_r prod_n A^(n)[i_n, r]`, one entry at a time.
pub fn materialize(model: &CpModel) -> Result<MaterializedModel> {
    let dims = model.map_spec().local_dims().to_vec();
    checked_volume(&dims)?;
    let mut data = Vec::with_capacity(dims.iter().product());
    let mut index = MultiIndex::new(&dims);
    while let Some(ix) = index.next_index() {
        let mut entry = 0.0;
        for r in 0..model.rank() {
            let mut term = 1.0;
            for (n, &i) in ix.iter().enumerate() {
                term *= model.factor(n)[(i, r)];
            }
            entry += term;
        }
        data.push(entry);
    }
    Ok(MaterializedModel {
        weights: DenseTensor::from_vec(&dims, data)?,
        map_spec: model.map_spec().clone(),
    })
}

/// `<Φ(x), W>` with `Φ(x)` formed explicitly as an outer product.
pub fn predict_oracle(mat: &MaterializedModel, x: &[f64]) -> Result<f64> {
    let phis: Vec<Vec<f64>> = mat
        .map_spec
        .map_row(x)?
        .iter()
        .map(|f| f.to_dense())
        .collect();
    let big_phi = outer_product_chain(&phis)?;
    big_phi.inner(&mat.weights)
}

/// `alpha * <B ⊛ W, B ⊛ W>` with `B = b_1 ∘ ... ∘ b_N`.
pub fn order_penalty_oracle(mat: &MaterializedModel, b_vectors: &[Vec<f64>], alpha: f64) -> Result<f64> {
    let b = outer_product_chain(b_vectors)?;
    if b.dims() != mat.weights.dims() {
        return Err(Error::Dimension(format!(
            "B has shape {:?}, W has {:?}",
            b.dims(),
            mat.weights.dims()
        )));
    }
    let sum: f64 = b
        .as_slice()
        .iter()
        .zip(mat.weights.as_slice())
        .map(|(bi, wi)| (bi * wi) * (bi * wi))
        .sum();
    Ok(alpha * sum)
}

/// Default central-difference step for a parameter of value `theta`.
pub fn default_step(theta: f64) -> f64 {
    1e-6 * theta.abs().max(1.0)
}

/// Central differences of a scalar function of the model, one factor entry at
/// a time. `step = None` uses [`default_step`] per parameter; `Some(h)` uses
/// a fixed absolute step.
pub fn finite_difference<F>(f: F, model: &CpModel, step: Option<f64>) -> Result<FactorGradients>
where
    F: Fn(&CpModel) -> Result<f64>,
{
    if let Some(h) = step {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Input(format!("finite-difference step {h} must be positive")));
        }
    }
    let mut probe = model.clone();
    let mut grads = FactorGradients::zeros_like(model);
    for n in 0..model.n_features() {
        for k in 0..model.factor(n).as_slice().len() {
            let theta = model.factor(n).as_slice()[k];
            let h = step.unwrap_or_else(|| default_step(theta));
            probe.factors_mut()[n].as_mut_slice()[k] = theta + h;
            let plus = f(&probe)?;
            probe.factors_mut()[n].as_mut_slice()[k] = theta - h;
            let minus = f(&probe)?;
            probe.factors_mut()[n].as_mut_slice()[k] = theta;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::Numeric(format!(
                    "function is not finite around factor {n}, entry {k}"
                )));
            }
            grads.matrices_mut()[n].as_mut_slice()[k] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Central differences of a function of a flat parameter vector.
pub fn finite_difference_vec<F>(f: F, point: &[f64], step: Option<f64>) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let theta = point[k];
        let h = step.unwrap_or_else(|| default_step(theta));
        probe[k] = theta + h;
        let plus = f(&probe);
        probe[k] = theta - h;
        let minus = f(&probe);
        probe[k] = theta;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::Numeric(format!("function is not finite around entry {k}")));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

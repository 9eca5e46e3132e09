//! Fixtures shared by the benchmarks.

use cpnet_core::{init_random, CpModel, FeatureMapSpec, LocalFeature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn polynomial_model(n_features: usize, d: usize, rank: usize, seed: u64) -> CpModel {
    let spec = FeatureMapSpec::normalized_polynomial(n_features, d).expect("valid map");
    init_random(&spec, rank, 0.2, seed).expect("valid init")
}

pub fn categorical_model(cardinalities: &[usize], rank: usize, seed: u64) -> CpModel {
    let spec = FeatureMapSpec::categorical(cardinalities).expect("valid map");
    init_random(&spec, rank, 0.2, seed).expect("valid init")
}

/// One row of inputs suitable for `model`, already mapped.
pub fn mapped_row(model: &CpModel, seed: u64) -> Vec<LocalFeature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = model.map_spec();
    let row: Vec<f64> = (0..spec.n_features())
        .map(|n| match spec.cardinality(n) {
            Some(k) => rng.random_range(0..k) as f64,
            None => rng.random_range(-2.0..2.0),
        })
        .collect();
    spec.map_row(&row).expect("row matches map")
}

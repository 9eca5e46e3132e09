//! Supervised learning with a weight tensor over all feature interactions,
//! stored in CP (canonical polyadic) format.
//!
//! A model holds one factor matrix per input feature. Prediction and gradient
//! evaluation cost `O(N R d)` for `N` features, rank `R` and local dimension
//! `d`, while the represented tensor has `d^N` entries. The [`oracle`] module
//! holds brute-force references used to check every fast path.
//!
//! ```
//! use cpnet_core::{CpModel, FeatureMapSpec, Matrix};
//!
//! let spec = FeatureMapSpec::polynomial(2, 2).unwrap();
//! let factors = vec![
//!     Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
//!     Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap(),
//! ];
//! let model = CpModel::new(factors, spec).unwrap();
//! assert_eq!(model.predict(&[1.0, 1.0]).unwrap(), 21.0);
//! ```

pub mod data;
pub mod error;
pub mod feature_map;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod regularizer;
pub mod training;

pub use data::{
    generate_synthetic_poly, load_csv, read_csv, split, standardize, target_stats, Column, ColumnKind,
    ColumnStats, CsvOptions, Dataset, PolynomialTruth, Schema, SplitSpec, Splits, Standardization,
    SyntheticData, SyntheticSpec,
};
pub use error::{Error, ErrorCategory, Result};
pub use feature_map::{FeatureMapSpec, LocalFeature, MapKind};
pub use linalg::{hadamard, khatri_rao, DenseTensor, Matrix, MAX_TENSOR_ENTRIES};
pub use model::{CpModel, FactorGradients, ModelDocument, Workspace};
pub use regularizer::Regularizer;
pub use training::{
    evaluate, fit, fit_linear_baseline, init_linear, init_random, initialize, map_spec_for, mean_loss,
    EpochRecord, FitReport, Init, LinearSolution, Loss, Metric, Optimizer, TrainConfig,
};

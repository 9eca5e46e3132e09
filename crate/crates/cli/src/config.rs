//! Run settings from flags and an optional flat TOML file.
//!
//! Precedence, highest first: command-line flags, `--config` file, built-in
//! defaults. File keys are the long flag names with `_` for `-`.

use std::path::{Path, PathBuf};

use clap::Args;
use cpnet_core::{
    Error, Init, Loss, MapKind, Metric, Optimizer, Regularizer, Result, SplitSpec, SyntheticSpec, TrainConfig,
};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Flat TOML file with default values for any of these options
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Training CSV; synthetic polynomial data when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the target column in the CSV
    #[arg(long)]
    pub target_column: Option<String>,
    /// Comma-separated columns to treat as categorical
    #[arg(long, value_delimiter = ',')]
    pub categorical: Option<Vec<String>>,

    /// Local feature map: poly, poly-norm or categorical
    #[arg(long)]
    pub map: Option<String>,
    /// Local dimension d of the polynomial maps
    #[arg(long)]
    pub local_dim: Option<usize>,
    /// CP rank R
    #[arg(long)]
    pub rank: Option<usize>,
    /// Loss: mse or bce
    #[arg(long)]
    pub loss: Option<String>,
    /// Regularizer: none, l2 or order
    #[arg(long)]
    pub reg: Option<String>,
    /// Regularization strength
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Order regularization base (> 1)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Initialization: random or linear
    #[arg(long)]
    pub init: Option<String>,
    /// Standard deviation of random initialization
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Optimizer: adam or sgd
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Passes over the training set
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for data generation, splitting, initialization and shuffling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep sample order fixed across epochs
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_shuffle: Option<bool>,
    /// Validation metric: mse, auc or accuracy
    #[arg(long)]
    pub metric: Option<String>,
    /// Decision threshold for accuracy
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Standardize the target with training statistics
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize_target: Option<bool>,
    /// Fraction of rows held out for testing
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Fraction of the remaining rows used for validation
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Also fit and report the linear baseline
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub baseline: Option<bool>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Local dimensions for sweep-d, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub d_values: Option<Vec<usize>>,
    /// Ranks for sweep-rank, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub rank_values: Option<Vec<usize>>,

    /// Synthetic data: number of samples
    #[arg(long)]
    pub samples: Option<usize>,
    /// Synthetic data: features entering the target
    #[arg(long)]
    pub informative: Option<usize>,
    /// Synthetic data: pure-noise features
    #[arg(long)]
    pub noise_features: Option<usize>,
    /// Synthetic data: standard deviation of target noise
    #[arg(long)]
    pub noise_std: Option<f64>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($field:ident),* $(,)?) => {
        Settings {
            config: $hi.config.or($lo.config),
            $($field: $hi.$field.or($lo.$field),)*
        }
    };
}

impl Settings {
    /// Fills unset fields from the `--config` file, if one was given.
    pub fn with_file(self) -> Result<Settings> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_file(&path)?;
        Ok(overlay!(
            self, file, data, target_column, categorical, map, local_dim, rank, loss, reg, alpha, beta, init,
            sigma, optimizer, lr, epochs, batch_size, seed, no_shuffle, metric, threshold, standardize_target,
            test_fraction, validation_fraction, baseline, out, d_values, rank_values, samples, informative,
            noise_features, noise_std,
        ))
    }
}

fn read_file(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| {
        let detail = e.message().to_string();
        Error::Config(format!("{}: {detail}", path.display()))
    })
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub target_column: Option<String>,
    pub categorical: Vec<String>,
    pub map: MapKind,
    pub local_dim: usize,
    pub train: TrainConfig,
    pub standardize_target: bool,
    pub split: SplitSpec,
    pub synthetic: SyntheticSpec,
    pub baseline: bool,
    pub out: PathBuf,
    pub d_values: Vec<usize>,
    pub rank_values: Vec<usize>,
}

pub const DEFAULT_LOCAL_DIM: usize = 2;
pub const DEFAULT_RANK: usize = 10;
pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_ALPHA: f64 = 1e-3;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_SIGMA: f64 = 0.2;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub fn parse_map(s: &str) -> Result<MapKind> {
    s.parse()
}

pub fn parse_loss(s: &str) -> Result<Loss> {
    match s {
        "mse" => Ok(Loss::Mse),
        "bce" => Ok(Loss::LogisticBce),
        _ => Err(usage(format!("unknown loss `{s}` (expected mse or bce)"))),
    }
}

pub fn parse_metric(s: &str, threshold: f64) -> Result<Metric> {
    match s {
        "mse" => Ok(Metric::Mse),
        "auc" => Ok(Metric::Auc),
        "accuracy" => Ok(Metric::Accuracy { threshold }),
        _ => Err(usage(format!("unknown metric `{s}` (expected mse, auc or accuracy)"))),
    }
}

fn parse_reg(s: &str, alpha: f64, beta: f64) -> Result<Regularizer> {
    match s {
        "none" => Ok(Regularizer::None),
        "l2" => Ok(Regularizer::L2 { alpha }),
        "order" => Ok(Regularizer::Order { alpha, beta }),
        _ => Err(usage(format!("unknown regularizer `{s}` (expected none, l2 or order)"))),
    }
}

fn parse_init(s: &str, sigma: f64) -> Result<Init> {
    match s {
        "random" => Ok(Init::RandomGaussian { sigma }),
        "linear" => Ok(Init::LinearModel),
        _ => Err(usage(format!("unknown init `{s}` (expected random or linear)"))),
    }
}

fn parse_optimizer(s: &str, lr: f64) -> Result<Optimizer> {
    match s {
        "adam" => Ok(Optimizer::adam(lr)),
        "sgd" => Ok(Optimizer::Sgd { lr }),
        _ => Err(usage(format!("unknown optimizer `{s}` (expected adam or sgd)"))),
    }
}

fn fraction(name: &str, v: f64) -> Result<f64> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")))
    }
}

impl RunConfig {
    pub fn resolve(s: Settings) -> Result<RunConfig> {
        let seed = s.seed.unwrap_or(0);
        let threshold = s.threshold.unwrap_or(DEFAULT_THRESHOLD);
        let train = TrainConfig {
            rank: s.rank.unwrap_or(DEFAULT_RANK),
            epochs: s.epochs.unwrap_or(DEFAULT_EPOCHS),
            batch_size: s.batch_size.unwrap_or(32),
            optimizer: parse_optimizer(s.optimizer.as_deref().unwrap_or("adam"), s.lr.unwrap_or(DEFAULT_LR))?,
            loss: parse_loss(s.loss.as_deref().unwrap_or("mse"))?,
            regularizer: parse_reg(
                s.reg.as_deref().unwrap_or("none"),
                s.alpha.unwrap_or(DEFAULT_ALPHA),
                s.beta.unwrap_or(DEFAULT_BETA),
            )?,
            init: parse_init(s.init.as_deref().unwrap_or("random"), s.sigma.unwrap_or(DEFAULT_SIGMA))?,
            seed,
            shuffle: !s.no_shuffle.unwrap_or(false),
            metric: parse_metric(s.metric.as_deref().unwrap_or("mse"), threshold)?,
        };
        train.validate()?;
        if s.data.is_some() && s.target_column.is_none() {
            return Err(usage("--target-column is required together with --data"));
        }
        let defaults = SyntheticSpec::default();
        Ok(RunConfig {
            data: s.data,
            target_column: s.target_column,
            categorical: s.categorical.unwrap_or_default(),
            map: parse_map(s.map.as_deref().unwrap_or("poly"))?,
            local_dim: s.local_dim.unwrap_or(DEFAULT_LOCAL_DIM),
            train,
            standardize_target: s.standardize_target.unwrap_or(false),
            split: SplitSpec {
                test_fraction: fraction("test_fraction", s.test_fraction.unwrap_or(0.2))?,
                validation_fraction: fraction("validation_fraction", s.validation_fraction.unwrap_or(0.2))?,
                seed,
            },
            synthetic: SyntheticSpec {
                n_samples: s.samples.unwrap_or(defaults.n_samples),
                informative: s.informative.unwrap_or(defaults.informative),
                noise_features: s.noise_features.unwrap_or(defaults.noise_features),
                noise_std: s.noise_std.unwrap_or(defaults.noise_std),
                seed,
                linear_only: false,
            },
            baseline: s.baseline.unwrap_or(false),
            out: s.out.unwrap_or_else(|| PathBuf::from("cpnet-out")),
            d_values: s.d_values.unwrap_or_default(),
            rank_values: s.rank_values.unwrap_or_default(),
        })
    }
}

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cpnet_core::training::score;
use cpnet_core::{
    fit, fit_linear_baseline, generate_synthetic_poly, initialize, load_csv, map_spec_for, split, standardize,
    target_stats, ColumnStats, CpModel, CsvOptions, Dataset, Error, FeatureMapSpec, FitReport, MapKind,
    Metric, Result, Schema, Standardization, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.csv";
pub const PREPROCESS_FILE: &str = "preprocess.json";

/// Everything needed to turn a raw CSV row into model input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub schema: Schema,
    pub target_column: String,
    pub standardization: Standardization,
    /// Present when the target was standardized for training.
    pub target: Option<ColumnStats>,
}

impl Preprocess {
    fn load(path: &Path) -> Result<Preprocess> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: format!("{}: {e}", path.display()),
        })
    }

    fn predict(&self, model: &CpModel, data: &Dataset) -> Result<Vec<f64>> {
        let data = self.standardization.apply(data)?;
        let raw = model.predict_batch(&data.rows().collect::<Vec<_>>())?;
        Ok(match &self.target {
            Some(t) => raw.into_iter().map(|z| t.invert(z)).collect(),
            None => raw,
        })
    }

    fn read(&self, path: &Path, with_target: bool) -> Result<Dataset> {
        let options = CsvOptions {
            target_column: with_target.then(|| self.target_column.clone()),
            categorical_columns: Vec::new(),
            schema: Some(self.schema.clone()),
        };
        load_csv(path, &options)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Prepared {
    train: Dataset,
    validation: Dataset,
    test: Dataset,
    preprocess: Preprocess,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let data = match &cfg.data {
        Some(path) => {
            let options = CsvOptions {
                target_column: cfg.target_column.clone(),
                categorical_columns: cfg.categorical.clone(),
                schema: None,
            };
            load_csv(path, &options)?
        }
        None => generate_synthetic_poly(&cfg.synthetic)?.dataset,
    };
    let splits = split(&data, &cfg.split)?;
    let stats = standardize(&splits.train)?;
    let mut train = stats.apply(&splits.train)?;
    let mut validation = stats.apply(&splits.validation)?;
    let mut test = stats.apply(&splits.test)?;
    let target = if cfg.standardize_target {
        let t = target_stats(&train)?;
        train = train.map_targets(|y| t.apply(y));
        validation = validation.map_targets(|y| t.apply(y));
        test = test.map_targets(|y| t.apply(y));
        Some(t)
    } else {
        None
    };
    let preprocess = Preprocess {
        schema: data.schema().clone(),
        target_column: data.target_name().to_string(),
        standardization: stats,
        target,
    };
    Ok(Prepared {
        train,
        validation,
        test,
        preprocess,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn evaluate_if_any(model: &CpModel, data: &Dataset, metric: Metric) -> Result<Option<f64>> {
    if data.is_empty() {
        Ok(None)
    } else {
        cpnet_core::evaluate(model, data, metric).map(Some)
    }
}

fn train_once(p: &Prepared, spec: &FeatureMapSpec, cfg: &TrainConfig) -> Result<(CpModel, FitReport)> {
    let model = initialize(spec, &p.train, cfg)?;
    let validation = (!p.validation.is_empty()).then_some(&p.validation);
    fit(model, &p.train, validation, cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let p = prepare(cfg)?;
    let spec = map_spec_for(&p.train, cfg.map, cfg.local_dim)?;
    let metric = cfg.train.metric;
    let (model, report) = train_once(&p, &spec, &cfg.train)?;

    create_dir(&cfg.out)?;
    model.save_to_path(&cfg.out.join(MODEL_FILE))?;
    write(&cfg.out.join(REPORT_FILE), &report.to_csv())?;
    let preprocess = serde_json::to_string_pretty(&p.preprocess).expect("preprocess serializes") + "\n";
    write(&cfg.out.join(PREPROCESS_FILE), &preprocess)?;

    let name = metric.name();
    println!(
        "trained {} features, map {}, rank {}, {} epochs on {} rows",
        spec.n_features(),
        spec.kind(),
        model.rank(),
        report.epochs.len(),
        p.train.len()
    );
    println!("initial val {name}: {}", fmt_opt(report.initial_val_metric));
    println!("final val {name}: {}", fmt_opt(report.final_val_metric()));
    println!("best val {name}: {}", fmt_opt(report.best_val_metric()));
    println!("test {name}: {}", fmt_opt(evaluate_if_any(&model, &p.test, metric)?));
    if cfg.baseline {
        let base_spec = match cfg.map {
            MapKind::Categorical => spec.clone(),
            _ => FeatureMapSpec::polynomial(spec.n_features(), 2)?,
        };
        let lin = fit_linear_baseline(&p.train, cfg.train.loss, &base_spec)?;
        let lin_model = cpnet_core::init_linear(&lin, &base_spec, base_spec.n_features())?;
        println!("linear baseline val {name}: {}", fmt_opt(evaluate_if_any(&lin_model, &p.validation, metric)?));
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

/// Drops repeated sweep values, keeping first occurrences in order.
pub fn dedup(values: &[usize], what: &str) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &v in values {
        if seen.insert(v) {
            out.push(v);
        } else {
            eprintln!("warning: duplicate {what} value {v} ignored");
        }
    }
    out
}

#[derive(Clone, Copy)]
pub enum Sweep {
    LocalDim,
    Rank,
}

pub fn sweep(cfg: &RunConfig, which: Sweep) -> Result<()> {
    let (values, column, flag, file) = match which {
        Sweep::LocalDim => (&cfg.d_values, "d", "--d-values", "sweep_d.csv"),
        Sweep::Rank => (&cfg.rank_values, "rank", "--rank-values", "sweep_rank.csv"),
    };
    if values.is_empty() {
        return Err(Error::Usage(format!("{flag} must list at least one value")));
    }
    if matches!(which, Sweep::LocalDim) && cfg.map == MapKind::Categorical {
        return Err(Error::Usage("sweep-d needs the poly or poly-norm map".into()));
    }
    let values = dedup(values, column);
    let p = prepare(cfg)?;
    let name = cfg.train.metric.name();
    let mut table = format!("{column},best_val_{name},train_seconds\n");
    for &v in &values {
        let (d, rank) = match which {
            Sweep::LocalDim => (v, cfg.train.rank),
            Sweep::Rank => (cfg.local_dim, v),
        };
        let spec = map_spec_for(&p.train, cfg.map, d)?;
        let train_cfg = TrainConfig {
            rank,
            ..cfg.train.clone()
        };
        let (_, report) = train_once(&p, &spec, &train_cfg)?;
        let seconds: f64 = report.epochs.iter().map(|e| e.seconds).sum();
        let best = report.best_val_metric().map_or_else(String::new, |v| v.to_string());
        let line = format!("{v},{best},{seconds:.3}\n");
        print!("{line}");
        table.push_str(&line);
    }
    create_dir(&cfg.out)?;
    write(&cfg.out.join(file), &table)
}

fn model_dir_file(model: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        model.parent().unwrap_or_else(|| Path::new(".")).join(PREPROCESS_FILE)
    })
}

pub fn evaluate(model: &Path, data: &Path, preprocess: Option<&Path>, metric: Metric) -> Result<()> {
    let m = CpModel::load_from_path(model)?;
    let pre = Preprocess::load(&model_dir_file(model, preprocess))?;
    let dataset = pre.read(data, true)?;
    let preds = pre.predict(&m, &dataset)?;
    let value = score(&preds, dataset.targets(), metric)?;
    println!("{}: {value}", metric.name());
    Ok(())
}

pub fn predict(model: &Path, data: &Path, preprocess: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let m = CpModel::load_from_path(model)?;
    let pre = Preprocess::load(&model_dir_file(model, preprocess))?;
    let dataset = pre.read(data, false)?;
    let preds = if dataset.is_empty() {
        Vec::new()
    } else {
        pre.predict(&m, &dataset)?
    };
    let mut text = String::from("prediction\n");
    for p in preds {
        text.push_str(&format!("{p}\n"));
    }
    match out {
        Some(path) => write(path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

/// Parses a comma-separated, one-based index tuple.
pub fn parse_index(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            match t.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => Err(Error::Usage(format!(
                    "malformed index tuple `{s}`: expected comma-separated integers >= 1"
                ))),
            }
        })
        .collect()
}

pub fn inspect(model: &Path, index: &str) -> Result<()> {
    let indices = parse_index(index)?;
    let m = CpModel::load_from_path(model)?;
    println!("{}", m.extract_coefficient(&indices)?);
    Ok(())
}

pub fn gen_synthetic(cfg: &RunConfig, out: &Path, linear_only: bool) -> Result<()> {
    let spec = cpnet_core::SyntheticSpec {
        linear_only,
        ..cfg.synthetic
    };
    let data = generate_synthetic_poly(&spec)?;
    data.dataset.write_csv_path(out)?;
    eprintln!("wrote {} rows to {}", data.dataset.len(), out.display());
    Ok(())
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpnet_core::{CpModel, Dataset, FeatureMapSpec, Standardization};

fn cpnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpnet")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_error(o: &Output, code: i32, category: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{category}]: ")), "{err}");
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_synthetic(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", path_str(out), "--samples", "300"];
    for (flag, value) in [("--epochs", "4"), ("--rank", "7")] {
        if !extra.contains(&flag) {
            args.extend([flag, value]);
        }
    }
    args.extend_from_slice(extra);
    cpnet(&args)
}

#[test]
fn train_on_synthetic_defaults_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_synthetic(&out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4);
    assert!(report.starts_with("epoch,train_loss,val_loss,val_mse,seconds"));
    assert!(out.join("model.json").exists());
    assert!(out.join("preprocess.json").exists());
    assert!(stdout(&o).contains("final val mse"));
}

#[test]
fn training_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(train_synthetic(out, &["--init", "linear", "--reg", "order", "--beta", "1.5"]).status.success());
    }
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_synthetic(&out, &["--epochs", "0", "--seed", "3", "--sigma", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("model.json")).unwrap();
    let spec = FeatureMapSpec::polynomial(7, 2).unwrap();
    let expected = cpnet_core::init_random(&spec, 7, 0.5, 3).unwrap();
    assert_eq!(text, expected.save());
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 1);
}

#[test]
fn bad_data_path_names_the_path() {
    let o = cpnet(&["train", "--data", "/nonexistent/data.csv", "--target-column", "y"]);
    assert_error(&o, 2, "data");
    assert!(stderr(&o).contains("/nonexistent/data.csv"));
}

#[test]
fn usage_errors_exit_one() {
    assert_error(&cpnet(&["train", "--rank", "lots"]), 1, "usage");
    assert_error(&cpnet(&["frobnicate"]), 1, "usage");
    assert_error(&cpnet(&["train", "--loss", "hinge"]), 1, "usage");
    assert_error(&cpnet(&["train", "--data", "x.csv"]), 1, "usage");
    assert_error(&cpnet(&["sweep-d"]), 1, "usage");
    assert!(cpnet(&["--help"]).status.success());
}

#[test]
fn linear_init_with_too_small_rank_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_synthetic(&dir.path().join("r"), &["--init", "linear", "--rank", "3"]);
    assert_error(&o, 1, "usage");
    assert!(stderr(&o).contains("rank"));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_synthetic(
        &dir.path().join("r"),
        &["--optimizer", "sgd", "--lr", "50", "--local-dim", "4", "--sigma", "1", "--epochs", "20"],
    );
    assert_error(&o, 3, "numeric");
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("run");
    fs::write(&cfg, format!("epochs = 2\nrank = 3\nsamples = 200\nout = \"{}\"\n", out.display())).unwrap();
    let o = cpnet(&["train", "--config", path_str(&cfg), "--epochs", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 4);
    let model = CpModel::load_from_path(&out.join("model.json")).unwrap();
    assert_eq!(model.rank(), 3);

    fs::write(&cfg, "epochz = 2\n").unwrap();
    assert_error(&cpnet(&["train", "--config", path_str(&cfg)]), 1, "usage");
}

fn standardize_row(pre: &serde_json::Value, row: &[f64]) -> Vec<f64> {
    let stats: Standardization = serde_json::from_value(pre["standardization"].clone()).unwrap();
    let data = Dataset::dense(&[row.to_vec()], vec![0.0]).unwrap();
    stats.apply(&data).unwrap().row(0).to_vec()
}

#[test]
fn predict_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let o = cpnet(&["gen-synthetic", "--out", path_str(&csv), "--samples", "150", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("run");
    let o = cpnet(&[
        "train", "--data", path_str(&csv), "--target-column", "y", "--out", path_str(&out), "--epochs", "3",
        "--local-dim", "3", "--rank", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model_path = out.join("model.json");
    let model = CpModel::load_from_path(&model_path).unwrap();
    let pre: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("preprocess.json")).unwrap()).unwrap();

    let preds_path = dir.path().join("preds.csv");
    let o = cpnet(&["predict", "--model", path_str(&model_path), "--data", path_str(&csv), "--out", path_str(&preds_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&preds_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("prediction"));
    let preds: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(preds.len(), 150);

    let data = cpnet_core::load_csv(&csv, &cpnet_core::CsvOptions::with_target("y")).unwrap();
    let rows: Vec<Vec<f64>> = data.rows().map(|r| standardize_row(&pre, r)).collect();
    let batch = model.predict_batch(&rows).unwrap();
    for (a, b) in preds.iter().zip(&batch) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(model.predict(&rows[0]).unwrap().to_bits(), preds[0].to_bits());

    let o = cpnet(&["evaluate", "--model", path_str(&model_path), "--data", path_str(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mse: f64 = stdout(&o).trim().strip_prefix("mse: ").unwrap().parse().unwrap();
    let direct = batch.iter().zip(data.targets()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / 150.0;
    assert!((mse - direct).abs() <= 1e-12 * direct);

    // Header only: no predictions.
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "x1,x2,x3,x4,x5,x6,x7\n").unwrap();
    let o = cpnet(&["predict", "--model", path_str(&model_path), "--data", path_str(&empty)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "prediction\n");

    // Missing column is named.
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,x2,x3,x4,x5,x6\n1,2,3,4,5,6\n").unwrap();
    let o = cpnet(&["predict", "--model", path_str(&model_path), "--data", path_str(&bad)]);
    assert_error(&o, 2, "data");
    assert!(stderr(&o).contains("x7"));
}

#[test]
fn categorical_training_and_unseen_category() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ratings.csv");
    let mut text = String::from("user,item,label\n");
    for u in 0..10 {
        for i in 0..6 {
            text.push_str(&format!("u{u},i{i},{}\n", u8::from((u * i) % 3 == 0)));
        }
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("run");
    let o = cpnet(&[
        "train", "--data", path_str(&csv), "--target-column", "label", "--categorical", "user,item", "--map",
        "categorical", "--init", "linear", "--rank", "2", "--metric", "auc", "--reg", "order", "--alpha", "5e-5",
        "--beta", "3.6", "--epochs", "5", "--out", path_str(&out), "--baseline",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("linear baseline val auc"));

    let unseen = dir.path().join("unseen.csv");
    fs::write(&unseen, "user,item\nu99,i1\n").unwrap();
    let o = cpnet(&["predict", "--model", path_str(&out.join("model.json")), "--data", path_str(&unseen)]);
    assert_error(&o, 2, "data");
    assert!(stderr(&o).contains("u99"));
}

#[test]
fn inspect_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_synthetic(&out, &["--epochs", "0", "--init", "linear"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model_path = out.join("model.json");
    let model = CpModel::load_from_path(&model_path).unwrap();

    let o = cpnet(&["inspect", "--model", path_str(&model_path), "--index", "1,1,1,1,1,1,1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bias: f64 = stdout(&o).trim().parse().unwrap();
    let zero_row = vec![0.0; 7];
    assert!((bias - model.predict(&zero_row).unwrap()).abs() < 1e-12);

    let o = cpnet(&["inspect", "--model", path_str(&model_path), "--index", "2,1,2,1,1,1,1"]);
    assert!(o.status.success());
    assert!(stdout(&o).trim().parse::<f64>().unwrap().abs() < 1e-12);

    assert_error(&cpnet(&["inspect", "--model", path_str(&model_path), "--index", "1,x"]), 1, "usage");
    assert_error(&cpnet(&["inspect", "--model", path_str(&model_path), "--index", "1,1,1,1,1,1,9"]), 2, "data");
}

#[test]
fn inspect_matches_oracle_entry() {
    // Three features, one rank-one term: W[i,j,k] = a_i b_j c_k.
    let dir = tempfile::tempdir().unwrap();
    let rows = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
    let factors = vec![
        cpnet_core::Matrix::from_rows(&rows(&[1.0, 2.0])).unwrap(),
        cpnet_core::Matrix::from_rows(&rows(&[3.0, 5.0])).unwrap(),
        cpnet_core::Matrix::from_rows(&rows(&[7.0, 11.0])).unwrap(),
    ];
    let model = CpModel::new(factors, FeatureMapSpec::polynomial(3, 2).unwrap()).unwrap();
    let path = dir.path().join("m.json");
    model.save_to_path(&path).unwrap();
    let mat = cpnet_core::oracle::materialize(&model).unwrap();
    // x_1 x_3 selects the second entry of features 1 and 3.
    let o = cpnet(&["inspect", "--model", path_str(&path), "--index", "2,1,2"]);
    let value: f64 = stdout(&o).trim().parse().unwrap();
    assert_eq!(value, mat.weights().get(&[1, 0, 1]).unwrap());
    assert_eq!(value, 2.0 * 3.0 * 11.0);
}

#[test]
fn sweeps_write_one_row_per_distinct_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = cpnet(&[
        "sweep-d", "--d-values", "2,3,2", "--map", "poly-norm", "--samples", "200", "--epochs", "2", "--rank", "3",
        "--sigma", "0.8", "--out", path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: duplicate d value 2"));
    let table = fs::read_to_string(out.join("sweep_d.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "d,best_val_mse,train_seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("3,"));

    let o = cpnet(&[
        "sweep-rank", "--rank-values", "2", "--samples", "200", "--epochs", "2", "--out", path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sweep_rank.csv")).unwrap().lines().count(), 2);
}

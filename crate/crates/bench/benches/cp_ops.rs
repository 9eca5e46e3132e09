use std::hint::black_box;

use cpnet_bench::{categorical_model, mapped_row, polynomial_model};
use cpnet_core::regularizer::{b_vectors, order_penalty, order_penalty_gradient};
use cpnet_core::{FactorGradients, Regularizer, Workspace};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict");
    for &(n, d, r) in &[(8, 8, 20), (8, 75, 20), (32, 8, 20), (8, 8, 100)] {
        let model = polynomial_model(n, d, r, 1);
        let row = mapped_row(&model, 2);
        let mut ws = Workspace::new(&model);
        group.bench_with_input(BenchmarkId::from_parameter(format!("N{n}_d{d}_R{r}")), &row, |b, row| {
            b.iter(|| model.predict_mapped(black_box(row), &mut ws).unwrap())
        });
    }
    let model = categorical_model(&[943, 1682], 16, 3);
    let row = mapped_row(&model, 4);
    let mut ws = Workspace::new(&model);
    group.bench_function("onehot_943x1682_R16", |b| {
        b.iter(|| model.predict_mapped(black_box(&row), &mut ws).unwrap())
    });
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient");
    for &(n, d, r) in &[(8, 8, 20), (32, 8, 20)] {
        let model = polynomial_model(n, d, r, 5);
        let row = mapped_row(&model, 6);
        let mut ws = Workspace::new(&model);
        let mut grads = FactorGradients::zeros_like(&model);
        group.bench_function(format!("N{n}_d{d}_R{r}"), |b| {
            b.iter(|| {
                model
                    .accumulate_gradient(black_box(&row), |_| 1.0, &mut grads, &mut ws)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn penalty(c: &mut Criterion) {
    let mut group = c.benchmark_group("order_penalty");
    let reg = Regularizer::Order { alpha: 1e-3, beta: 2.0 };
    for &r in &[5, 20, 50] {
        let model = polynomial_model(8, 16, r, 7);
        let b = b_vectors(&reg, model.map_spec()).unwrap();
        group.bench_function(format!("value_R{r}"), |bench| {
            bench.iter(|| order_penalty(black_box(&model), &b, 1e-3).unwrap())
        });
        group.bench_function(format!("gradient_R{r}"), |bench| {
            bench.iter(|| order_penalty_gradient(black_box(&model), &b, 1e-3).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, predict, gradient, penalty);
criterion_main!(benches);

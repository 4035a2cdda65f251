use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lpvmax::ho_kalman::{realize, HankelSpec, StateDim};
use lpvmax::markov::sub_markov_from_ss;
use lpvmax::multi_index::lifted_products;
use lpvmax::plr::{build_regressor, plr_fit, Orders, PlrConfig};
use lpvmax::Path;
use lpvmax_bench::{benchmark_data, benchmark_model};

fn lifting(c: &mut Criterion) {
    let (_, data) = benchmark_data(64);
    let mut group = c.benchmark_group("lifted_products");
    for depth in [1, 3, 5] {
        group.bench_with_input(BenchmarkId::from_parameter(depth), &depth, |b, &depth| {
            let mut out = Vec::new();
            b.iter(|| {
                out.clear();
                lifted_products(black_box(&data.p), 63, depth, &mut out);
                out.len()
            })
        });
    }
    group.finish();
}

fn regressor(c: &mut Criterion) {
    let (_, data) = benchmark_data(5000);
    c.bench_function("build_regressor n=5000 n_b=4 n_c=2", |b| {
        b.iter(|| build_regressor(black_box(&data), None, Orders::new(4, 2), 0).unwrap())
    });
}

fn fit(c: &mut Criterion) {
    let (_, data) = benchmark_data(2000);
    let mut group = c.benchmark_group("plr_fit");
    group.sample_size(10);
    group.bench_function("n=2000 n_b=3 n_c=2", |b| {
        b.iter(|| plr_fit(black_box(&data), Orders::new(3, 2), &PlrConfig::noisy()).unwrap())
    });
    group.finish();
}

fn realization(c: &mut Criterion) {
    let model = benchmark_model();
    let proc = sub_markov_from_ss(&model, Path::Process, 4);
    let noise = sub_markov_from_ss(&model, Path::Noise, 4);
    let spec = HankelSpec::full(2, 2, StateDim::Fixed(2)).unwrap();
    c.bench_function("realize depth 2", |b| {
        b.iter(|| realize(black_box(&proc), black_box(&noise), &spec).unwrap())
    });
}

criterion_group!(benches, lifting, regressor, fit, realization);
criterion_main!(benches);

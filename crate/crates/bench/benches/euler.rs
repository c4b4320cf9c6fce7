use criterion::{black_box, criterion_group, criterion_main, Criterion};
use utweak_core::catalog::builtin_example;
use utweak_core::dsl::ScalarField;
use utweak_core::euler::{euler_step, simulate_batch, Mesh, SimOptions};

fn step(c: &mut Criterion) {
    let arctan = builtin_example("arctan").unwrap().model;
    let grusin = builtin_example("grusin").unwrap().model;
    let mut out1 = [0.0];
    c.bench_function("euler_step/arctan", |b| b.iter(|| euler_step(&arctan, black_box(&[0.7]), 1e-2, black_box(&[0.05]), &mut out1)));
    let mut out2 = [0.0; 2];
    c.bench_function("euler_step/grusin", |b| b.iter(|| euler_step(&grusin, black_box(&[1.0, 0.3]), 1e-2, black_box(&[0.05]), &mut out2)));
}

fn batch(c: &mut Criterion) {
    let arctan = builtin_example("arctan").unwrap().model;
    let mesh = Mesh::new(1e-2, 1000).with_stride(100);
    let mut g = c.benchmark_group("batch");
    g.sample_size(10);
    g.bench_function("arctan/100x1000", |b| b.iter(|| simulate_batch(&arctan, &[0.0], &mesh, 100, 7, &SimOptions::default()).unwrap()));
    let jac = SimOptions { jacobian: true, ..Default::default() };
    g.bench_function("arctan/100x1000/jacobian", |b| b.iter(|| simulate_batch(&arctan, &[0.0], &mesh, 100, 7, &jac).unwrap()));
    g.finish();
}

fn dsl(c: &mut Criterion) {
    let f = ScalarField::parse("2 * atan(x1 - 5) - x1 + smoothstep5(x2, 0, 1) * cosh(x1 / 3)", 2).unwrap();
    c.bench_function("dsl/eval", |b| b.iter(|| f.value(black_box(&[0.4, 0.6]))));
    c.bench_function("dsl/gradient", |b| b.iter(|| f.gradient(black_box(&[0.4, 0.6]))));
}

criterion_group!(benches, step, batch, dsl);
criterion_main!(benches);

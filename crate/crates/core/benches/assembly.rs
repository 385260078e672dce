use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use apx::assembly::ProblemData;
use apx::check::run_checks;
use apx::coefficients::{AlphaCoefficient, MatrixField, SourceTerm};
use apx::exec::set_parallel;
use apx::geometry::{structured_square_mesh, DiscreteField, FeSpace};
use apx::varexp::{ExponentField, ExponentMode};

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn problem(n: usize) -> ProblemData {
    let space = FeSpace::new(structured_square_mesh(n), 4).unwrap();
    let p = ExponentField::from_fn(&space, ExponentMode::Solver, |x, _| 3.0 + 0.5 * (std::f64::consts::PI * x).sin()).unwrap();
    let alpha = AlphaCoefficient::parse("1 + 1/(1 + t^2)", 1.0, 2.0).unwrap();
    ProblemData::new(p, MatrixField::identity(), alpha, SourceTerm::constant(1.0)).unwrap()
}

fn bench_assembly(c: &mut Criterion) {
    for n in [64, 128] {
        let data = problem(n);
        let u = DiscreteField::interpolate(data.space(), |x, y| x * (1.0 - x) * y * (1.0 - y));
        let frozen = data.freeze(&u).unwrap();
        let mut group = c.benchmark_group(format!("assembly_n{n}"));
        for (name, par) in MODES {
            set_parallel(par);
            group.bench_with_input(BenchmarkId::new("energy", name), &u, |b, u| b.iter(|| frozen.energy(black_box(u))));
            group.bench_with_input(BenchmarkId::new("residual", name), &u, |b, u| b.iter(|| frozen.residual(black_box(u))));
            group.bench_with_input(BenchmarkId::new("hessian", name), &u, |b, u| b.iter(|| frozen.hessian(black_box(u), 1e-8)));
        }
        group.finish();
    }
    set_parallel(true);
}

fn bench_checks(c: &mut Criterion) {
    let mut group = c.benchmark_group("inequality_suite");
    group.sample_size(10);
    for (name, par) in MODES {
        set_parallel(par);
        group.bench_function(BenchmarkId::new("draws_2000", name), |b| b.iter(|| run_checks(black_box(42), 2000)));
    }
    group.finish();
    set_parallel(true);
}

criterion_group!(benches, bench_assembly, bench_checks);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use obsprune::fisher::{build_fisher_inverse, FisherConfig};
use obsprune::pruners::{prune, Method, PrunerSpec, Target};
use obsprune::solver::{solve_global, solve_nm};
use obsprune_bench::problem;

fn fisher_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("fisher_build");
    let (_, grads) = problem(1, 4096, 256);
    for b in [16, 64] {
        let cfg = FisherConfig::new(b, 1e-8, 4096).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(b), &cfg, |bch, cfg| {
            bch.iter(|| build_fisher_inverse(&grads, cfg).unwrap())
        });
    }
    g.finish();
}

fn solver_scaling(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_global_b16");
    g.sample_size(20);
    for log_d in [12, 13, 14] {
        let d = 1usize << log_d;
        let (layer, grads) = problem(2, d, 32);
        let inv = build_fisher_inverse(&grads, &FisherConfig::new(16, 1e-4, 4096).unwrap()).unwrap();
        let prunable = vec![true; d];
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |bch, &d| {
            bch.iter(|| solve_global(&layer.weights, &inv, d / 2, &prunable).unwrap())
        });
    }
    g.finish();
}

fn nm(c: &mut Criterion) {
    let (layer, grads) = problem(3, 8192, 32);
    let inv = build_fisher_inverse(&grads, &FisherConfig::new(16, 1e-4, 4096).unwrap()).unwrap();
    let prunable = vec![true; layer.len()];
    c.bench_function("solve_nm_2_4", |bch| {
        bch.iter(|| solve_nm(&layer.weights, &inv, 2, 4, &prunable).unwrap())
    });
}

fn methods(c: &mut Criterion) {
    let mut g = c.benchmark_group("prune_half");
    g.sample_size(20);
    let (layer, grads) = problem(4, 4096, 128);
    let layers = [layer];
    for method in [Method::Gm, Method::Wf, Method::Ovit] {
        let spec = PrunerSpec::new(method);
        g.bench_function(method.as_str(), |bch| {
            bch.iter(|| prune(&spec, &layers, std::slice::from_ref(&grads), Target::Sparsity(0.5)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fisher_build, solver_scaling, nm, methods);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use unfitted_benches::{case, SIZES};
use unfitted_core::cond::cond1;
use unfitted_core::experiment::{build_discretization, run_case};
use unfitted_core::system::assemble;
use unfitted_core::{Factorization, Method};

fn discretization(c: &mut Criterion) {
    let mut g = c.benchmark_group("discretization");
    for n in SIZES {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| build_discretization(&case(Method::StrongAggregation, n, 1)).unwrap())
        });
    }
    g.finish();
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for method in
        [Method::FacetGhostPenalty, Method::BulkGhostPenalty, Method::WeakAggregationGrad, Method::StrongAggregation]
    {
        let cfg = case(method, 32, 1);
        let disc = build_discretization(&cfg).unwrap();
        let problem = cfg.problem().unwrap();
        g.bench_function(method.as_str(), |b| b.iter(|| assemble(&disc, &problem, &cfg.method_config()).unwrap()));
    }
    g.finish();
}

fn solve_and_condition(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(20);
    for order in [1, 2] {
        let cfg = case(Method::WeakAggregationL2, 32, order);
        let disc = build_discretization(&cfg).unwrap();
        let system = assemble(&disc, &cfg.problem().unwrap(), &cfg.method_config()).unwrap();
        g.bench_function(format!("factorize m={order}"), |b| b.iter(|| Factorization::new(&system.matrix).unwrap()));
        let f = Factorization::new(&system.matrix).unwrap();
        g.bench_function(format!("cond1 m={order}"), |b| b.iter(|| cond1(&system.matrix, &f)));
    }
    g.finish();
}

fn full_case(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_case");
    g.sample_size(10);
    for method in Method::ALL {
        g.bench_function(method.as_str(), |b| b.iter(|| run_case(&case(method, 32, 1)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, discretization, assembly, solve_and_condition, full_case);
criterion_main!(benches);

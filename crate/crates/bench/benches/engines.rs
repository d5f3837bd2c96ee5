use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use revode_bench::Fixture;
use revode_core::{compute_gradient, Engine, Method};

fn gradient_engines(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient");
    group.sample_size(10);
    for n in [100usize, 1000] {
        let fixture = Fixture::new(Method::Rk4, n);
        for engine in [Engine::Reversible, Engine::FullTape, Engine::Checkpointed { c: 2 }, Engine::Checkpointed { c: 8 }] {
            group.bench_with_input(BenchmarkId::new(engine.to_string(), n), &fixture, |b, f| {
                let problem = f.problem();
                b.iter(|| compute_gradient(engine, &problem).expect("gradient"));
            });
        }
    }
    group.finish();
}

criterion_group!(benches, gradient_engines);
criterion_main!(benches);

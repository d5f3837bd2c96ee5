use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use revode_core::reversible::{backward_step, forward_step};
use revode_core::rk::{step, step_vjp};
use revode_core::{Coupling, Method, Mlp, ReversibleState, VectorField};

fn field_and_steps(c: &mut Criterion) {
    let mlp = Mlp::seeded(4, 32, 1);
    let y = [0.1, -0.2, 0.3, -0.4];
    let v = [1.0, 0.5, -0.5, 0.25];
    c.bench_function("mlp/evaluate", |b| b.iter(|| mlp.evaluate(0.5, black_box(&y)).unwrap()));
    c.bench_function("mlp/vjp", |b| b.iter(|| mlp.vjp(0.5, black_box(&y), black_box(&v)).unwrap()));

    for method in Method::ALL {
        let tab = method.tableau();
        c.bench_function(&format!("step/{}", method.name()), |b| {
            b.iter(|| step(&mlp, &tab, 0.0, black_box(&y), 0.01).unwrap())
        });
        c.bench_function(&format!("step_vjp/{}", method.name()), |b| {
            b.iter(|| step_vjp(&mlp, &tab, 0.0, black_box(&y), 0.01, &v).unwrap())
        });
    }

    let tab = Method::Rk4.tableau();
    let coupling = Coupling::default();
    let state = ReversibleState::initial(0.0, &y);
    let next = forward_step(&mlp, &tab, coupling, &state, 0.01).unwrap();
    c.bench_function("reversible/forward_step", |b| {
        b.iter(|| forward_step(&mlp, &tab, coupling, black_box(&state), 0.01).unwrap())
    });
    c.bench_function("reversible/backward_step", |b| {
        b.iter(|| backward_step(&mlp, &tab, coupling, black_box(&next), 0.01).unwrap())
    });
}

criterion_group!(benches, field_and_steps);
criterion_main!(benches);

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revode_core::baseline::{checkpointed_backprop, solve_scheme, Scheme};
use revode_core::engine::{central_difference, evaluate_loss, relative_linf};
use revode_core::experiments::{train, train_with, TrainConfig};
use revode_core::field::DoublePendulumField;
use revode_core::reversible::{backward_step, forward_step, reconstruct, solve_forward_with};
use revode_core::stability::{determinant, amplification_matrix, empirical_decay, is_stable, region_scan, Decay};
use revode_core::{
    compute_gradient, ControllerConfig, Coupling, Engine, LinearField, Method, Mlp, Problem, ReversibleState, Schedule,
    SquaredError, VectorField, WeightedSum,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn norm2(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖₂ / ‖b‖₂` over the stacked `(y, z)`.
fn stacked_relative(a: &ReversibleState, b: &ReversibleState) -> f64 {
    let diff = norm2(a.y.iter().zip(&b.y).chain(a.z.iter().zip(&b.z)).map(|(p, q)| p - q));
    diff / norm2(b.y.iter().chain(&b.z).copied())
}

/// Least-squares slope of `log err` against `log h`.
fn fitted_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn terminal_y(field: &dyn VectorField, method: Method, scheme: Scheme, y0: f64, h: f64, n: usize) -> Result<f64, String> {
    let sol = solve_scheme(field, &method.tableau(), scheme, 0.0, &[y0], &Schedule::Fixed { h, n_steps: n }, &[], None)
        .map_err(err)?;
    Ok(sol.state[0])
}

fn convergence_order() -> Check {
    let field = LinearField::scalar(-1.0);
    let exact = (-1.0f64).exp();
    let reversible = Scheme::reversible(0.999).map_err(err)?;
    let mut report = Vec::new();
    for (method, order) in [(Method::Euler, 1.0), (Method::Midpoint, 2.0), (Method::Ralston3, 3.0), (Method::Rk4, 4.0)] {
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for k in 4..=9 {
            let n = 1usize << k;
            let h = 1.0 / n as f64;
            let rev = (terminal_y(&field, method, reversible, 1.0, h, n)? - exact).abs();
            let base = (terminal_y(&field, method, Scheme::Plain, 1.0, h, n)? - exact).abs();
            ensure(rev <= 10.0 * base, || {
                format!("{}: reversible error {rev:.3e} vs base {base:.3e} at h = 2^-{k}", method.name())
            })?;
            hs.push(h);
            errs.push(rev);
        }
        let slope = fitted_slope(&hs, &errs);
        ensure((slope - order).abs() <= 0.2, || {
            format!("{}: fitted slope {slope:.3}, expected {order}", method.name())
        })?;
        report.push(format!("{} {slope:.3}", method.name()));
    }
    Ok(format!("slopes: {}", report.join(", ")))
}

fn gradient_exactness() -> Check {
    let tab = Method::Rk4.tableau();
    let scheme = Scheme::reversible(0.99).map_err(err)?;
    let (n, h) = (100, 0.01);
    let schedule = Schedule::Fixed { h, n_steps: n };
    let obs: Vec<f64> = (1..=10).map(|k| (10 * k) as f64 * h).collect();
    let (mut worst_rev, mut worst_fd, mut worst_ckpt) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let model = Mlp::seeded(2, 10, seed);
        let y0: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets: Vec<Vec<f64>> = (0..obs.len()).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let loss = SquaredError::mse(targets);
        let problem = Problem {
            field: &model,
            tableau: &tab,
            scheme,
            t0: 0.0,
            y0: &y0,
            schedule: &schedule,
            obs_times: &obs,
            loss: &loss,
        };
        let rev = compute_gradient(Engine::Reversible, &problem).map_err(err)?;
        let tape = compute_gradient(Engine::FullTape, &problem).map_err(err)?;
        let ckpt = compute_gradient(Engine::Checkpointed { c: 4 }, &problem).map_err(err)?;
        let fd = central_difference(model.parameters().values(), 1e-6, |theta| {
            let mut m = model.clone();
            m.set_params(theta)?;
            evaluate_loss(&problem.with_field(&m))
        })
        .map_err(err)?;
        worst_rev = worst_rev.max(relative_linf(&rev.theta_bar, &tape.theta_bar));
        worst_fd = worst_fd.max(relative_linf(&tape.theta_bar, &fd));
        worst_ckpt = worst_ckpt.max(relative_linf(&ckpt.theta_bar, &tape.theta_bar));
    }
    ensure(worst_rev <= 1e-8, || format!("reversible vs tape {worst_rev:.3e} > 1e-8"))?;
    ensure(worst_fd <= 1e-4, || format!("tape vs finite differences {worst_fd:.3e} > 1e-4"))?;
    ensure(worst_ckpt <= 1e-12, || format!("checkpointed vs tape {worst_ckpt:.3e} > 1e-12"))?;
    Ok(format!(
        "worst over 20 seeds: rev/tape {worst_rev:.2e}, tape/fd {worst_fd:.2e}, ckpt/tape {worst_ckpt:.2e}"
    ))
}

fn reconstruction_fidelity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = Mlp::seeded(2, 10, 3);
    let (mut single, mut drift) = (0.0f64, 0.0f64);
    for lambda in [0.99, 0.999, 1.0] {
        let coupling = Coupling::new(lambda).map_err(err)?;
        for method in Method::ALL {
            let tab = method.tableau();
            for _ in 0..50 {
                let s = ReversibleState {
                    t: rng.random_range(0.0..1.0),
                    y: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    z: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    n: 1,
                };
                let h = rng.random_range(0.001..0.2);
                let next = forward_step(&model, &tab, coupling, &s, h).map_err(err)?;
                let back = backward_step(&model, &tab, coupling, &next, h).map_err(err)?;
                single = single.max(stacked_relative(&back, &s));
            }
        }
        let tab = Method::Rk4.tableau();
        let y0 = [0.4, -0.7];
        let sol = solve_forward_with(
            &model,
            &tab,
            coupling,
            0.0,
            &y0,
            &Schedule::Fixed { h: 0.01, n_steps: 1000 },
            &[],
            &mut |_, _, _| Ok(()),
        )
        .map_err(err)?;
        let rebuilt = reconstruct(&model, &tab, coupling, &sol.state, &sol.record).map_err(err)?;
        drift = drift.max(stacked_relative(&rebuilt, &ReversibleState::initial(0.0, &y0)));
    }
    ensure(single <= 1e-12, || format!("single-step roundtrip {single:.3e} > 1e-12"))?;
    ensure(drift <= 1e-10, || format!("1000-step drift {drift:.3e} > 1e-10"))?;
    Ok(format!("single step {single:.2e}, 1000-step drift {drift:.2e}"))
}

fn stability_cross_validation() -> Check {
    let lambdas: Vec<Coupling> = (0..100).map(|i| Coupling::new((i + 1) as f64 / 100.0).unwrap()).collect();
    let h_alphas: Vec<f64> = (0..100).map(|j| -3.0 + 3.0 * j as f64 / 100.0).collect();
    let cell = 0.03;
    let (mut compared, mut simulated, mut conclusive) = (0usize, 0usize, 0usize);
    for method in Method::ALL {
        let tab = method.tableau();
        for &c in &lambdas {
            for &ha in &h_alphas {
                let lambda = c.value();
                let det = determinant(&amplification_matrix(&tab, ha, lambda));
                ensure((det - lambda).abs() <= 1e-12, || {
                    format!("{}: det T = {det} at λ = {lambda}, hα = {ha}", method.name())
                })?;
                let v = is_stable(&tab, ha, c);
                if !v.off_boundary(1e-9) {
                    continue;
                }
                compared += 1;
                let by_radius = v.spectral_radius < 1.0;
                ensure(v.criterion == by_radius, || {
                    format!(
                        "{}: Γ = {} says {}, ρ = {} at λ = {lambda}, hα = {ha}",
                        method.name(),
                        v.gamma,
                        v.criterion,
                        v.spectral_radius
                    )
                })?;
                simulated += 1;
                let decay = empirical_decay(&tab, ha, c, 10_000).map_err(err)?;
                let agrees = match decay {
                    Decay::Decays => by_radius,
                    Decay::BlowsUp => !by_radius,
                    Decay::Inconclusive => true,
                };
                if decay != Decay::Inconclusive {
                    conclusive += 1;
                }
                ensure(agrees, || {
                    format!("{}: simulation {decay:?} but ρ = {} at λ = {lambda}, hα = {ha}", method.name(), v.spectral_radius)
                })?;
            }
        }
    }
    let euler = Method::Euler.tableau();
    for row in region_scan(&euler, &lambdas[..99], &h_alphas) {
        let expected = row.lambda - 1.0;
        // no stable cell on the grid puts the boundary past its last cell, at hα = 0
        let found = row.boundary.unwrap_or(0.0);
        ensure((found - expected).abs() <= cell + 1e-12, || {
            format!("Euler boundary at λ = {}: {found} vs {expected}", row.lambda)
        })?;
    }
    Ok(format!(
        "{compared} off-band cells agree, {conclusive}/{simulated} simulations conclusive, Euler boundary within one cell"
    ))
}

fn linear_problem() -> (LinearField, WeightedSum) {
    (LinearField::scalar(-0.5), WeightedSum::new(vec![1.0]))
}

fn memory_counters() -> Check {
    let (field, loss) = linear_problem();
    let tab = Method::Rk4.tableau();
    let scheme = Scheme::reversible(0.99).map_err(err)?;
    let mut peaks = Vec::new();
    for n in [100usize, 1000, 10_000] {
        let schedule = Schedule::Fixed { h: 1.0 / n as f64, n_steps: n };
        let obs = [schedule.t_end(0.0)];
        let problem = Problem {
            field: &field,
            tableau: &tab,
            scheme,
            t0: 0.0,
            y0: &[1.0],
            schedule: &schedule,
            obs_times: &obs,
            loss: &loss,
        };
        let rev = compute_gradient(Engine::Reversible, &problem).map_err(err)?;
        ensure(rev.counters.stored_state_peak == 2, || {
            format!("reversible peak {} at N = {n}", rev.counters.stored_state_peak)
        })?;
        peaks.push(rev.counters.stored_state_peak);
        for c in [2usize, 3, 4, 8, 16] {
            let g = checkpointed_backprop(&field, &tab, Scheme::Plain, 0.0, &[1.0], &schedule, &obs, &loss, c)
                .map_err(err)?;
            ensure(g.counters.stored_state_peak <= c, || {
                format!("checkpointed peak {} > c = {c} at N = {n}", g.counters.stored_state_peak)
            })?;
        }
    }
    Ok(format!("reversible peaks {peaks:?} for N = 1e2, 1e3, 1e4; checkpointed peak ≤ c for c ∈ {{2, 3, 4, 8, 16}}"))
}

/// Minimal advances to reverse `n` steps from a stored start with `s` free slots.
fn revolve_oracle(n_max: usize, s_max: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; s_max + 1]; n_max + 1];
    for n in 1..=n_max {
        t[n][0] = (n * (n - 1) / 2) as u64;
    }
    for s in 1..=s_max {
        for n in 2..=n_max {
            t[n][s] = (1..n).map(|j| j as u64 + t[n - j][s - 1] + t[j][s]).min().unwrap();
        }
    }
    t
}

fn work_complexity() -> Check {
    let (field, loss) = linear_problem();
    let euler = Method::Euler.tableau();
    let scheme = Scheme::reversible(0.99).map_err(err)?;
    let mut rev_evals = Vec::new();
    let mut ckpt_recomputed = Vec::new();
    for n in [1000usize, 10_000] {
        let schedule = Schedule::Fixed { h: 1.0 / n as f64, n_steps: n };
        let obs = [schedule.t_end(0.0)];
        let problem = Problem {
            field: &field,
            tableau: &euler,
            scheme,
            t0: 0.0,
            y0: &[1.0],
            schedule: &schedule,
            obs_times: &obs,
            loss: &loss,
        };
        let rev = compute_gradient(Engine::Reversible, &problem).map_err(err)?;
        ensure(rev.counters.step_evals() == 4 * n && rev.counters.vjp_evals == 2 * n, || {
            format!("reversible counters at N = {n}: {:?}", rev.counters)
        })?;
        rev_evals.push(rev.counters.step_evals());
        let ckpt = checkpointed_backprop(&field, &euler, Scheme::Plain, 0.0, &[1.0], &schedule, &obs, &loss, 2)
            .map_err(err)?;
        ckpt_recomputed.push(ckpt.counters.advances - n);
    }
    let rev_ratio = rev_evals[1] as f64 / rev_evals[0] as f64;
    let ckpt_ratio = ckpt_recomputed[1] as f64 / ckpt_recomputed[0] as f64;
    ensure(rev_ratio == 10.0, || format!("reversible ratio {rev_ratio}"))?;
    ensure(ckpt_ratio > 10.0, || format!("checkpointed c = 2 ratio {ckpt_ratio:.2} is not super-linear"))?;

    let oracle = revolve_oracle(64, 7);
    for n in 1..=64 {
        for c in 2..=8 {
            let schedule = Schedule::Fixed { h: 0.01, n_steps: n };
            let t_end = schedule.t_end(0.0);
            let g = checkpointed_backprop(&field, &euler, Scheme::Plain, 0.0, &[1.0], &schedule, &[t_end], &loss, c)
                .map_err(err)?;
            let expected = oracle[n][c - 1] + 1;
            ensure(g.counters.advances as u64 == expected, || {
                format!("N = {n}, c = {c}: {} advances, oracle {expected}", g.counters.advances)
            })?;
        }
    }
    Ok(format!(
        "N 1e3→1e4 ratio: reversible {rev_ratio:.1}, checkpointed c=2 recomputation {ckpt_ratio:.1}; oracle match N ≤ 64, c ≤ 8"
    ))
}

fn white_dwarf_training() -> Check {
    let config = TrainConfig::white_dwarf();
    let data = config.data.load(None).map_err(err)?;
    ensure(data.len() == 1001, || format!("{} samples", data.len()))?;

    let short = |engine| TrainConfig {
        engine,
        steps: 50,
        ..TrainConfig::white_dwarf()
    };
    let rev = train(&short(Engine::Reversible), &data).map_err(err)?;
    let tape = train(&short(Engine::FullTape), &data).map_err(err)?;
    let mut worst = 0.0f64;
    for (a, b) in rev.log.iter().zip(&tape.log) {
        let (a, b) = (a.loss.ok_or("skipped step")?, b.loss.ok_or("skipped step")?);
        worst = worst.max((a - b).abs() / b.abs());
    }
    ensure(worst <= 1e-6, || format!("reversible vs tape loss curves differ by {worst:.3e}"))?;

    let mut skipped = 0;
    let full = train_with(&config, &data, &mut |r| {
        if r.loss.is_none() {
            skipped += 1;
        }
        Ok(())
    })
    .map_err(err)?;
    ensure(full.final_loss <= 1e-3, || {
        format!("final MSE {:.3e} > 1e-3 ({skipped} skipped)", full.final_loss)
    })?;

    let mut model = Mlp::seeded(2, config.hidden, config.seed);
    model.set_params(full.params.values()).map_err(err)?;
    let tab = Method::Rk4.tableau();
    let loss = SquaredError::mse(data.values().to_vec());
    let schedule = Schedule::uniform(0.0, 5.0, 1000);
    let problem = Problem {
        field: &model,
        tableau: &tab,
        scheme: config.scheme().map_err(err)?,
        t0: 0.0,
        y0: &data.values()[0],
        schedule: &schedule,
        obs_times: data.times(),
        loss: &loss,
    };
    let rev = compute_gradient(Engine::Reversible, &problem).map_err(err)?;
    let ckpt = compute_gradient(Engine::Checkpointed { c: 2 }, &problem).map_err(err)?;
    let rev_ms = rev.forward_ms + rev.backward_ms;
    ensure(rev_ms < ckpt.backward_ms, || {
        format!("reversible gradient {rev_ms:.1} ms not faster than checkpointed c=2 {:.1} ms", ckpt.backward_ms)
    })?;
    Ok(format!(
        "final MSE {:.3e}, loss agreement {worst:.2e} over 50 steps, gradient {rev_ms:.0} ms vs checkpointed {:.0} ms",
        full.final_loss, ckpt.backward_ms
    ))
}

fn adaptive_reversibility() -> Check {
    let field = DoublePendulumField::default();
    let tab = Method::Bosh3.tableau();
    let controller = ControllerConfig {
        atol: 1e-6,
        rtol: 1e-6,
        ..ControllerConfig::default()
    };
    let schedule = Schedule::Adaptive { t_end: 3.0, controller };
    let y0 = [1.5, 2.0, 0.0, 0.0];
    let plain = solve_scheme(&field, &tab, Scheme::Plain, 0.0, &y0, &schedule, &[], None).map_err(err)?;
    let plain_steps = plain.record.n_steps() as f64;
    let mut summary = Vec::new();
    for lambda in [0.99, 0.999, 1.0] {
        let coupling = Coupling::new(lambda).map_err(err)?;
        let sol = solve_forward_with(&field, &tab, coupling, 0.0, &y0, &schedule, &[], &mut |_, _, _| Ok(()))
            .map_err(err)?;
        let rebuilt = reconstruct(&field, &tab, coupling, &sol.state, &sol.record).map_err(err)?;
        let drift = stacked_relative(&rebuilt, &ReversibleState::initial(0.0, &y0));
        ensure(drift <= 1e-10, || format!("λ = {lambda}: reconstruction error {drift:.3e}"))?;
        let steps = sol.record.n_steps() as f64;
        let ratio = steps / plain_steps;
        ensure((ratio - 1.0).abs() <= 0.15, || {
            format!("λ = {lambda}: {steps} accepted steps vs {plain_steps} for plain Bosh3")
        })?;
        summary.push(format!("λ={lambda}: {steps} steps, drift {drift:.1e}"));
    }
    Ok(format!("plain {plain_steps} steps; {}", summary.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, f64, fn() -> Check); 8] = [
        ("convergence order", 10.0, convergence_order),
        ("gradient exactness", 30.0, gradient_exactness),
        ("reconstruction fidelity", 10.0, reconstruction_fidelity),
        ("stability cross-validation", 60.0, stability_cross_validation),
        ("memory counters", 10.0, memory_counters),
        ("work complexity", 60.0, work_complexity),
        ("white dwarf training", 900.0, white_dwarf_training),
        ("adaptive reversibility", 60.0, adaptive_reversibility),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let outcome = outcome.and_then(|detail| {
            if secs <= *budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {secs:.1} s, budget {budget} s"))
            }
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {secs:.1} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}; {secs:.1} s)", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use revode_core::baseline::Scheme;
use revode_core::{
    compute_gradient, ControllerConfig, Engine, FieldSpec, Method, Problem, Schedule, SquaredError, VectorField,
};

use super::Context;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub field: FieldSpec,
    pub solvers: Vec<Method>,
    pub engines: Vec<Engine>,
    /// Fixed-step cells.
    pub n_steps: Vec<usize>,
    /// Adaptive cells, one per `atol = rtol` value; needs embedded solvers.
    pub tolerances: Vec<f64>,
    pub t_end: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Runs cells on the worker pool; wall times are then not comparable.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            field: FieldSpec::Mlp { dim: 2, hidden: 10 },
            solvers: vec![Method::Rk4],
            engines: vec![Engine::Reversible, Engine::FullTape, Engine::Checkpointed { c: 2 }],
            n_steps: vec![100, 1000],
            tolerances: Vec::new(),
            t_end: 1.0,
            lambda: 0.99,
            seed: 0,
            parallel: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Size {
    Fixed(usize),
    Adaptive(f64),
}

#[derive(Clone, Debug, Serialize)]
struct Row {
    engine: String,
    solver: Method,
    n_steps: Option<usize>,
    tolerance: Option<f64>,
    accepted_steps: usize,
    rejected: usize,
    stored_state_peak: usize,
    stored_vector_peak: usize,
    step_evals: usize,
    recomputations: usize,
    vjp_evals: usize,
    advances: usize,
    forward_ms: f64,
    backward_ms: f64,
    wall_ms: f64,
    loss: f64,
}

#[derive(Serialize)]
struct Comparison {
    solver: Method,
    n_steps: Option<usize>,
    tolerance: Option<f64>,
    reversible_peak: usize,
    /// Checkpointed (c = 2) recomputations over reversible recomputations.
    recomputation_ratio: f64,
    reversible_faster: bool,
}

#[derive(Serialize)]
struct Summary {
    sequential_timing: bool,
    comparisons: Vec<Comparison>,
}

struct Bench<'a> {
    field: &'a dyn VectorField,
    scheme: Scheme,
    y0: Vec<f64>,
    loss: SquaredError,
    t_end: f64,
}

impl Bench<'_> {
    fn cell(&self, engine: Engine, solver: Method, size: Size) -> revode_core::Result<Row> {
        let tab = solver.tableau();
        let schedule = match size {
            Size::Fixed(n) => Schedule::uniform(0.0, self.t_end, n),
            Size::Adaptive(tol) => Schedule::Adaptive {
                t_end: self.t_end,
                controller: ControllerConfig {
                    atol: tol,
                    rtol: tol,
                    ..ControllerConfig::default()
                },
            },
        };
        let obs = [self.t_end];
        let problem = Problem {
            field: self.field,
            tableau: &tab,
            scheme: self.scheme,
            t0: 0.0,
            y0: &self.y0,
            schedule: &schedule,
            obs_times: &obs,
            loss: &self.loss,
        };
        let start = Instant::now();
        let r = compute_gradient(engine, &problem)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Row {
            engine: engine.to_string(),
            solver,
            n_steps: match size {
                Size::Fixed(n) => Some(n),
                Size::Adaptive(_) => None,
            },
            tolerance: match size {
                Size::Fixed(_) => None,
                Size::Adaptive(t) => Some(t),
            },
            accepted_steps: r.n_steps,
            rejected: r.rejected,
            stored_state_peak: r.counters.stored_state_peak,
            stored_vector_peak: r.counters.stored_vector_peak,
            step_evals: r.counters.step_evals(),
            recomputations: r.counters.recomputations(),
            vjp_evals: r.counters.vjp_evals,
            advances: r.counters.advances,
            forward_ms: r.forward_ms,
            backward_ms: r.backward_ms,
            wall_ms,
            loss: r.loss,
        })
    }
}

fn compare(rows: &[Row], sequential: bool) -> Vec<Comparison> {
    let reference = Engine::Checkpointed { c: 2 }.to_string();
    rows.iter()
        .filter(|r| r.engine == Engine::Reversible.to_string())
        .filter_map(|rev| {
            let ckpt = rows.iter().find(|r| {
                r.engine == reference && r.solver == rev.solver && r.n_steps == rev.n_steps && r.tolerance == rev.tolerance
            })?;
            Some(Comparison {
                solver: rev.solver,
                n_steps: rev.n_steps,
                tolerance: rev.tolerance,
                reversible_peak: rev.stored_state_peak,
                recomputation_ratio: ckpt.recomputations as f64 / rev.recomputations.max(1) as f64,
                reversible_faster: sequential && rev.wall_ms < ckpt.wall_ms,
            })
        })
        .collect()
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let mut cfg: BenchConfig = ctx.load(BenchConfig::default)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    if let Some(engine) = ctx.engine {
        cfg.engines = vec![engine];
    }
    if cfg.solvers.is_empty() || cfg.engines.is_empty() || (cfg.n_steps.is_empty() && cfg.tolerances.is_empty()) {
        return Err(CliError::Usage("bench needs at least one solver, engine and size".into()));
    }
    if !(cfg.t_end > 0.0) || cfg.n_steps.contains(&0) || cfg.tolerances.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::Usage("t_end, step counts and tolerances must be positive".into()));
    }
    if !cfg.tolerances.is_empty() {
        if let Some(m) = cfg.solvers.iter().find(|m| m.tableau().embedded_order().is_none()) {
            return Err(CliError::Usage(format!("adaptive cells need embedded methods, {} has none", m.name())));
        }
    }
    let scheme = Scheme::reversible(cfg.lambda)?;
    ctx.execute("bench", &cfg, Some(cfg.seed), |out| {
        let field = cfg.field.build(cfg.seed)?;
        let d = field.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bench = Bench {
            field: field.as_ref(),
            scheme,
            y0: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            loss: SquaredError::mse(vec![vec![0.0; d]]),
            t_end: cfg.t_end,
        };
        let sizes: Vec<Size> = cfg
            .n_steps
            .iter()
            .map(|&n| Size::Fixed(n))
            .chain(cfg.tolerances.iter().map(|&t| Size::Adaptive(t)))
            .collect();
        let mut cells = Vec::new();
        for &solver in &cfg.solvers {
            for &size in &sizes {
                for &engine in &cfg.engines {
                    cells.push((engine, solver, size));
                }
            }
        }
        let rows: Vec<Row> = if cfg.parallel {
            cells.par_iter().map(|&(e, s, z)| bench.cell(e, s, z)).collect::<Result<_, _>>()?
        } else {
            cells.iter().map(|&(e, s, z)| bench.cell(e, s, z)).collect::<Result<_, _>>()?
        };
        let mut lines = String::new();
        for row in &rows {
            lines.push_str(&serde_json::to_string(row).expect("rows serialize"));
            lines.push('\n');
        }
        out.write("bench.jsonl", lines)?;
        out.write_json(
            "bench_summary.json",
            &Summary {
                sequential_timing: !cfg.parallel,
                comparisons: compare(&rows, !cfg.parallel),
            },
        )?;
        Ok(())
    })
}

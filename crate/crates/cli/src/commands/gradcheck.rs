use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use revode_core::baseline::Scheme;
use revode_core::engine::{central_difference, evaluate_loss, relative_linf};
use revode_core::reversible::{reversible_backprop, solve_forward, BackpropOptions};
use revode_core::{compute_gradient, Coupling, Engine, FieldSpec, Method, Problem, Schedule, SquaredError};

use super::Context;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub reversible: f64,
    pub finite_difference: f64,
    pub checkpointed: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            reversible: 1e-8,
            finite_difference: 1e-4,
            checkpointed: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub field: FieldSpec,
    pub solver: Method,
    pub lambda: f64,
    pub n_steps: usize,
    pub h: f64,
    /// Evenly spaced observation times ending at the final step.
    pub observations: usize,
    pub checkpoints: usize,
    pub fd_eps: f64,
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Test hook: run the backward pass with this coupling instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupt_backward_lambda: Option<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            field: FieldSpec::Mlp { dim: 2, hidden: 10 },
            solver: Method::Rk4,
            lambda: 0.99,
            n_steps: 100,
            h: 0.01,
            observations: 10,
            checkpoints: 4,
            fd_eps: 1e-6,
            tolerances: Tolerances::default(),
            seed: 0,
            corrupt_backward_lambda: None,
        }
    }
}

pub const MAX_STEPS: usize = 200;

#[derive(Serialize)]
struct Deviation {
    value: f64,
    tolerance: f64,
    pass: bool,
}

impl Deviation {
    fn new(value: f64, tolerance: f64) -> Self {
        Deviation {
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Serialize)]
struct Report {
    n_params: usize,
    loss: f64,
    reversible_vs_tape: Deviation,
    tape_vs_finite_difference: Deviation,
    checkpointed_vs_tape: Deviation,
    #[serde(skip_serializing_if = "Option::is_none")]
    reversible_error: Option<String>,
    pass: bool,
}

impl GradcheckConfig {
    fn validate(&self) -> CliResult<()> {
        if self.n_steps == 0 || self.n_steps > MAX_STEPS {
            return Err(CliError::Usage(format!("n_steps must be in 1..={MAX_STEPS}, got {}", self.n_steps)));
        }
        if self.observations == 0 || self.n_steps % self.observations != 0 {
            return Err(CliError::Usage(format!(
                "observations ({}) must divide n_steps ({})",
                self.observations, self.n_steps
            )));
        }
        if !(self.h > 0.0) || !(self.fd_eps > 0.0) {
            return Err(CliError::Usage("h and fd_eps must be positive".into()));
        }
        Ok(())
    }
}

pub fn run(ctx: &Context) -> CliResult<()> {
    ctx.reject_engine("gradcheck")?;
    let mut cfg: GradcheckConfig = ctx.load(GradcheckConfig::default)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let scheme = Scheme::reversible(cfg.lambda)?;
    let corrupt = cfg.corrupt_backward_lambda.map(Coupling::new).transpose()?;
    ctx.execute("gradcheck", &cfg, Some(cfg.seed), |out| {
        let field = cfg.field.build(cfg.seed)?;
        let d = field.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let y0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets = (0..cfg.observations)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let loss = SquaredError::mse(targets);
        let stride = cfg.n_steps / cfg.observations;
        let obs: Vec<f64> = (1..=cfg.observations).map(|k| (k * stride) as f64 * cfg.h).collect();
        let schedule = Schedule::Fixed {
            h: cfg.h,
            n_steps: cfg.n_steps,
        };
        let tab = cfg.solver.tableau();
        let problem = Problem {
            field: field.as_ref(),
            tableau: &tab,
            scheme,
            t0: 0.0,
            y0: &y0,
            schedule: &schedule,
            obs_times: &obs,
            loss: &loss,
        };
        let tape = compute_gradient(Engine::FullTape, &problem)?;
        let ckpt = compute_gradient(Engine::Checkpointed { c: cfg.checkpoints }, &problem)?;
        let reversible = match corrupt {
            None => compute_gradient(Engine::Reversible, &problem).map(|r| r.theta_bar),
            Some(wrong) => {
                let Scheme::Reversible { lambda } = scheme else { unreachable!() };
                solve_forward(field.as_ref(), &tab, lambda, 0.0, &y0, &schedule, &obs, &loss).and_then(|sol| {
                    reversible_backprop(field.as_ref(), &tab, wrong, &sol.state, &sol.record, &loss, BackpropOptions::default())
                        .map(|b| b.adjoint.theta_bar)
                })
            }
        };
        let (rev_dev, reversible_error) = match reversible {
            Ok(theta_bar) => (relative_linf(&theta_bar, &tape.theta_bar), None),
            Err(e) if e.is_numerical() => (f64::INFINITY, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        let fd = central_difference(field.params(), cfg.fd_eps, |theta| {
            let probe = cfg.field.build_with_params(theta)?;
            evaluate_loss(&problem.with_field(probe.as_ref()))
        })?;
        let t = &cfg.tolerances;
        let reversible_vs_tape = Deviation::new(rev_dev, t.reversible);
        let tape_vs_finite_difference = Deviation::new(relative_linf(&tape.theta_bar, &fd), t.finite_difference);
        let checkpointed_vs_tape = Deviation::new(relative_linf(&ckpt.theta_bar, &tape.theta_bar), t.checkpointed);
        let pass = reversible_vs_tape.pass && tape_vs_finite_difference.pass && checkpointed_vs_tape.pass;
        let report = Report {
            n_params: field.num_params(),
            loss: tape.loss,
            reversible_vs_tape,
            tape_vs_finite_difference,
            checkpointed_vs_tape,
            reversible_error,
            pass,
        };
        out.write_json("gradcheck.json", &report)?;
        if !pass {
            return Err(CliError::CheckFailed(format!(
                "reversible/tape {:e}, tape/fd {:e}, checkpointed/tape {:e}",
                report.reversible_vs_tape.value, report.tape_vs_finite_difference.value, report.checkpointed_vs_tape.value
            )));
        }
        Ok(())
    })
}

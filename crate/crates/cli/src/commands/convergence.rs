use serde::{Deserialize, Serialize};

use revode_core::baseline::{solve_scheme, Scheme};
use revode_core::{LinearField, Method, Schedule};

use super::{loglog_slope, Context};
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub solvers: Vec<Method>,
    pub lambda: f64,
    /// Rate of the linear problem `dy/dt = αy`.
    pub alpha: f64,
    pub y0: f64,
    pub t_end: f64,
    pub h: Vec<f64>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            solvers: vec![Method::Euler, Method::Midpoint, Method::Ralston3, Method::Rk4],
            lambda: 0.999,
            alpha: -1.0,
            y0: 1.0,
            t_end: 1.0,
            h: (4..=9).map(|k| 2f64.powi(-k)).collect(),
        }
    }
}

#[derive(Serialize)]
struct Slopes {
    solver: Method,
    base: f64,
    reversible: f64,
    /// Largest reversible/base error ratio over the step sizes.
    max_error_ratio: f64,
}

fn steps_for(t_end: f64, h: f64) -> CliResult<usize> {
    let n = (t_end / h).round();
    if !(h > 0.0) || n < 1.0 || ((n * h - t_end) / t_end).abs() > 1e-9 {
        return Err(CliError::Usage(format!("step size {h} does not divide t_end = {t_end}")));
    }
    Ok(n as usize)
}

pub fn run(ctx: &Context) -> CliResult<()> {
    ctx.reject_engine("convergence")?;
    let cfg: ConvergenceConfig = ctx.load(ConvergenceConfig::default)?;
    if cfg.h.is_empty() {
        return Err(CliError::Usage("the step-size list is empty".into()));
    }
    if cfg.solvers.is_empty() {
        return Err(CliError::Usage("the solver list is empty".into()));
    }
    if !(cfg.t_end > 0.0) {
        return Err(CliError::Usage(format!("t_end must be positive, got {}", cfg.t_end)));
    }
    let steps: Vec<usize> = cfg.h.iter().map(|&h| steps_for(cfg.t_end, h)).collect::<CliResult<_>>()?;
    let reversible = Scheme::reversible(cfg.lambda)?;
    ctx.execute("convergence", &cfg, ctx.seed, |out| {
        let field = LinearField::scalar(cfg.alpha);
        let exact = cfg.y0 * (cfg.alpha * cfg.t_end).exp();
        let mut csv = String::from("solver,reversible,h,error\n");
        let mut slopes = Vec::new();
        for &method in &cfg.solvers {
            let tab = method.tableau();
            let mut errors = [Vec::new(), Vec::new()];
            for (&h, &n) in cfg.h.iter().zip(&steps) {
                for (i, scheme) in [Scheme::Plain, reversible].into_iter().enumerate() {
                    let sol = solve_scheme(&field, &tab, scheme, 0.0, &[cfg.y0], &Schedule::Fixed { h, n_steps: n }, &[], None)?;
                    let err = (sol.state[0] - exact).abs();
                    csv.push_str(&format!("{},{},{h},{err:e}\n", method.name(), i == 1));
                    errors[i].push(err);
                }
            }
            slopes.push(Slopes {
                solver: method,
                base: loglog_slope(&cfg.h, &errors[0]),
                reversible: loglog_slope(&cfg.h, &errors[1]),
                max_error_ratio: errors[1].iter().zip(&errors[0]).map(|(r, b)| r / b).fold(0.0, f64::max),
            });
        }
        out.write("convergence.csv", csv)?;
        out.write_json("convergence_slopes.json", &slopes)?;
        Ok(())
    })
}

//! A single entry point over the three gradient engines, plus gradient-checking helpers.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{checkpointed_backprop, full_tape_backprop, solve_scheme, BaselineOptions, Scheme};
use crate::counters::Counters;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::loss::ObservationLoss;
use crate::reversible::{reversible_backprop, solve_forward, BackpropOptions};
use crate::rk::ButcherTableau;
use crate::step_control::{Schedule, StepRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Engine {
    Reversible,
    FullTape,
    Checkpointed { c: usize },
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Engine::Reversible => f.write_str("reversible"),
            Engine::FullTape => f.write_str("full_tape"),
            Engine::Checkpointed { c } => write!(f, "checkpointed:{c}"),
        }
    }
}

impl FromStr for Engine {
    type Err = Error;

    /// Accepts `reversible`, `full_tape` and `checkpointed[:c]` (default `c = 2`).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reversible" => Ok(Engine::Reversible),
            "full_tape" => Ok(Engine::FullTape),
            "checkpointed" => Ok(Engine::Checkpointed { c: 2 }),
            other => match other.strip_prefix("checkpointed:").map(str::parse::<usize>) {
                Some(Ok(c)) => Ok(Engine::Checkpointed { c }),
                _ => Err(Error::Config(format!(
                    "unknown engine '{other}' (expected reversible, full_tape or checkpointed[:c])"
                ))),
            },
        }
    }
}

/// Everything a gradient computation needs.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub field: &'a dyn VectorField,
    pub tableau: &'a ButcherTableau,
    pub scheme: Scheme,
    pub t0: f64,
    pub y0: &'a [f64],
    pub schedule: &'a Schedule,
    pub obs_times: &'a [f64],
    pub loss: &'a dyn ObservationLoss,
}

impl<'a> Problem<'a> {
    /// Same problem with a different field (used for finite differences).
    pub fn with_field(self, field: &'a dyn VectorField) -> Self {
        Problem { field, ..self }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientReport {
    pub engine: Engine,
    pub loss: f64,
    pub theta_bar: Vec<f64>,
    pub y0_bar: Vec<f64>,
    pub counters: Counters,
    pub n_steps: usize,
    pub rejected: usize,
    /// Time spent in a separate forward pass (zero when the forward sweep is
    /// interleaved with the backward one).
    pub forward_ms: f64,
    pub backward_ms: f64,
    #[serde(skip)]
    pub record: StepRecord,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub fn compute_gradient(engine: Engine, p: &Problem<'_>) -> Result<GradientReport> {
    match engine {
        Engine::Reversible => {
            let Scheme::Reversible { lambda } = p.scheme else {
                return Err(Error::Config("the reversible engine needs the reversible scheme".into()));
            };
            let start = Instant::now();
            let sol = solve_forward(p.field, p.tableau, lambda, p.t0, p.y0, p.schedule, p.obs_times, p.loss)?;
            let forward_ms = ms(start);
            let start = Instant::now();
            let back = reversible_backprop(
                p.field,
                p.tableau,
                lambda,
                &sol.state,
                &sol.record,
                p.loss,
                BackpropOptions::default(),
            )?;
            let backward_ms = ms(start);
            let counters = Counters {
                stored_state_peak: back.counters.stored_state_peak.max(sol.counters.stored_state_peak),
                stored_vector_peak: back.counters.stored_vector_peak.max(sol.counters.stored_vector_peak),
                step_evals_forward: sol.counters.step_evals_forward,
                step_evals_backward: back.counters.step_evals_backward,
                vjp_evals: back.counters.vjp_evals,
                advances: sol.counters.advances,
            };
            Ok(GradientReport {
                engine,
                loss: sol.loss,
                y0_bar: back.adjoint.initial_gradient(),
                theta_bar: back.adjoint.theta_bar,
                counters,
                n_steps: sol.record.n_steps(),
                rejected: sol.record.rejected,
                forward_ms,
                backward_ms,
                record: sol.record,
            })
        }
        Engine::FullTape | Engine::Checkpointed { .. } => {
            let start = Instant::now();
            let g = match engine {
                Engine::Checkpointed { c } => checkpointed_backprop(
                    p.field, p.tableau, p.scheme, p.t0, p.y0, p.schedule, p.obs_times, p.loss, c,
                )?,
                _ => full_tape_backprop(
                    p.field,
                    p.tableau,
                    p.scheme,
                    p.t0,
                    p.y0,
                    p.schedule,
                    p.obs_times,
                    p.loss,
                    BaselineOptions::default(),
                )?,
            };
            Ok(GradientReport {
                engine,
                loss: g.loss,
                theta_bar: g.theta_bar,
                y0_bar: g.y0_bar,
                counters: g.counters,
                n_steps: g.record.n_steps(),
                rejected: g.record.rejected,
                forward_ms: 0.0,
                backward_ms: ms(start),
                record: g.record,
            })
        }
    }
}

/// Loss of a forward solve alone.
pub fn evaluate_loss(p: &Problem<'_>) -> Result<f64> {
    match p.scheme {
        Scheme::Reversible { lambda } => {
            Ok(solve_forward(p.field, p.tableau, lambda, p.t0, p.y0, p.schedule, p.obs_times, p.loss)?.loss)
        }
        Scheme::Plain => {
            Ok(solve_scheme(p.field, p.tableau, p.scheme, p.t0, p.y0, p.schedule, p.obs_times, Some(p.loss))?.loss)
        }
    }
}

/// Central differences `(f(θ + εeᵢ) − f(θ − εeᵢ)) / 2ε` for every coordinate.
pub fn central_difference(theta: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let up = f(&probe)?;
        probe[i] = theta[i] - eps;
        let down = f(&probe)?;
        probe[i] = theta[i];
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// `‖a − b‖∞ / ‖b‖∞`, with `b` the reference.
pub fn relative_linf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_linf on vectors of different length");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Mlp, ZeroField};
    use crate::loss::{SquaredError, WeightedSum};
    use crate::rk::Method;

    #[test]
    fn engine_names_round_trip() {
        for e in [Engine::Reversible, Engine::FullTape, Engine::Checkpointed { c: 7 }] {
            assert_eq!(e.to_string().parse::<Engine>().unwrap(), e);
        }
        assert_eq!("checkpointed".parse::<Engine>().unwrap(), Engine::Checkpointed { c: 2 });
        assert!("tape".parse::<Engine>().is_err());
        let json: Engine = serde_json::from_str(r#"{"kind":"checkpointed","c":3}"#).unwrap();
        assert_eq!(json, Engine::Checkpointed { c: 3 });
    }

    #[test]
    fn relative_linf_definition() {
        assert_eq!(relative_linf(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_linf(&[1.0, 2.5], &[1.0, 2.0]), 0.25);
        assert_eq!(relative_linf(&[], &[]), 0.0);
    }

    #[test]
    fn reversible_engine_needs_reversible_scheme() {
        let f = ZeroField::new(1);
        let tab = Method::Euler.tableau();
        let schedule = Schedule::Fixed { h: 0.1, n_steps: 2 };
        let loss = WeightedSum::new(vec![1.0]);
        let p = Problem {
            field: &f,
            tableau: &tab,
            scheme: Scheme::Plain,
            t0: 0.0,
            y0: &[1.0],
            schedule: &schedule,
            obs_times: &[0.2],
            loss: &loss,
        };
        assert!(matches!(compute_gradient(Engine::Reversible, &p), Err(Error::Config(_))));
    }

    #[test]
    fn engines_agree_with_each_other_and_finite_differences() {
        let f = Mlp::seeded(2, 5, 21);
        let tab = Method::Rk4.tableau();
        let schedule = Schedule::Fixed { h: 0.02, n_steps: 50 };
        let loss = SquaredError::mse(vec![vec![0.5, -0.5], vec![0.2, 0.1]]);
        let obs = [0.5, 1.0];
        let p = Problem {
            field: &f,
            tableau: &tab,
            scheme: Scheme::reversible(0.99).unwrap(),
            t0: 0.0,
            y0: &[0.3, 0.7],
            schedule: &schedule,
            obs_times: &obs,
            loss: &loss,
        };
        let rev = compute_gradient(Engine::Reversible, &p).unwrap();
        let tape = compute_gradient(Engine::FullTape, &p).unwrap();
        let ck = compute_gradient(Engine::Checkpointed { c: 3 }, &p).unwrap();
        assert!(relative_linf(&rev.theta_bar, &tape.theta_bar) <= 1e-8);
        assert!(relative_linf(&rev.y0_bar, &tape.y0_bar) <= 1e-8);
        assert!(relative_linf(&ck.theta_bar, &tape.theta_bar) <= 1e-12);
        assert_eq!(rev.loss, tape.loss);
        let fd = central_difference(f.parameters().values(), 1e-6, |theta| {
            let mut g = f.clone();
            g.set_params(theta)?;
            evaluate_loss(&p.with_field(&g))
        })
        .unwrap();
        assert!(relative_linf(&tape.theta_bar, &fd) <= 1e-4);
    }
}

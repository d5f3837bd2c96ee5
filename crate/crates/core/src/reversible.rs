//! The algebraically reversible coupled scheme and its O(1)-memory backpropagation.
//!
//! Given a base step `Ψ_h`, one step maps `(yₙ, zₙ)` to
//!
//! ```text
//! y_{n+1} = λ·yₙ + (1−λ)·zₙ + Ψ_h(tₙ, zₙ)
//! z_{n+1} = zₙ − Ψ_{−h}(t_{n+1}, y_{n+1})
//! ```
//!
//! and is inverted in closed form, so the backward pass rebuilds every state
//! from the terminal one instead of storing a trajectory.

use serde::{Deserialize, Serialize};

use crate::counters::{Counters, Occupancy};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::loss::ObservationLoss;
use crate::rk::{step, step_vjp, ButcherTableau};
use crate::step_control::{drive, error_norm, ControllerConfig, Integrator, Schedule, StepRecord};

/// Coupling parameter `λ ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Coupling(f64);

impl Coupling {
    pub const DEFAULT: f64 = 0.99;

    pub fn new(lambda: f64) -> Result<Self> {
        if lambda > 0.0 && lambda <= 1.0 {
            Ok(Coupling(lambda))
        } else {
            Err(Error::Config(format!("coupling λ = {lambda} must lie in (0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling(Self::DEFAULT)
    }
}

impl TryFrom<f64> for Coupling {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Coupling::new(v)
    }
}

impl From<Coupling> for f64 {
    fn from(c: Coupling) -> f64 {
        c.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversibleState {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub n: usize,
}

impl ReversibleState {
    /// `y₀ = z₀` at step 0.
    pub fn initial(t0: f64, y0: &[f64]) -> Self {
        ReversibleState {
            t: t0,
            y: y0.to_vec(),
            z: y0.to_vec(),
            n: 0,
        }
    }

    /// `‖a − b‖∞ / ‖b‖∞` over the stacked `(y, z)`.
    pub fn relative_distance(&self, reference: &ReversibleState) -> f64 {
        let diff = self
            .y
            .iter()
            .zip(&reference.y)
            .chain(self.z.iter().zip(&reference.z))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = reference.y.iter().chain(&reference.z).map(|v| v.abs()).fold(0.0, f64::max);
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointState {
    pub y_bar: Vec<f64>,
    pub z_bar: Vec<f64>,
    pub theta_bar: Vec<f64>,
}

impl AdjointState {
    /// Gradient with respect to `y(0)`, which feeds both `y₀` and `z₀`.
    pub fn initial_gradient(&self) -> Vec<f64> {
        self.y_bar.iter().zip(&self.z_bar).map(|(a, b)| a + b).collect()
    }
}

pub(crate) struct Advanced {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// `λ·y + (1−λ)·z + ψ`
fn couple(lambda: f64, y: &[f64], z: &[f64], psi: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(z)
        .zip(psi)
        .map(|((a, b), p)| lambda * a + (1.0 - lambda) * b + p)
        .collect()
}

/// `(y_{n+1} − (1−λ)·zₙ − ψ) / λ`
fn uncouple(lambda: f64, y_next: &[f64], z: &[f64], psi: &[f64]) -> Vec<f64> {
    y_next
        .iter()
        .zip(z)
        .zip(psi)
        .map(|((a, b), p)| (a - (1.0 - lambda) * b - p) / lambda)
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// One forward step on explicit times; `t_next` is passed so that the
/// backward pass can use exactly the same value.
#[allow(clippy::too_many_arguments)]
pub(crate) fn advance(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    lambda: f64,
    t: f64,
    t_next: f64,
    h: f64,
    y: &[f64],
    z: &[f64],
) -> Result<Advanced> {
    let fwd = step(field, tab, t, z, h)?;
    let y_next = couple(lambda, y, z, &fwd.increment);
    let back = step(field, tab, t_next, &y_next, -h)?;
    Ok(Advanced {
        z: sub(z, &back.increment),
        y: y_next,
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn retreat(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    lambda: f64,
    t: f64,
    t_next: f64,
    h: f64,
    y_next: &[f64],
    z_next: &[f64],
) -> Result<Advanced> {
    let back = step(field, tab, t_next, y_next, -h)?;
    let z = add(z_next, &back.increment);
    let fwd = step(field, tab, t, &z, h)?;
    Ok(Advanced {
        y: uncouple(lambda, y_next, &z, &fwd.increment),
        z,
    })
}

/// Advances `s` by one step of size `h > 0`.
pub fn forward_step(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    coupling: Coupling,
    s: &ReversibleState,
    h: f64,
) -> Result<ReversibleState> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    let t_next = s.t + h;
    let next = advance(field, tab, coupling.value(), s.t, t_next, h, &s.y, &s.z).map_err(|e| e.at_step(s.n))?;
    Ok(ReversibleState {
        t: t_next,
        y: next.y,
        z: next.z,
        n: s.n + 1,
    })
}

/// Inverts [`forward_step`]: `s` is the state at `n+1`, reached with step `h`.
pub fn backward_step(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    coupling: Coupling,
    s: &ReversibleState,
    h: f64,
) -> Result<ReversibleState> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    let t = s.t - h;
    let prev = retreat(field, tab, coupling.value(), t, s.t, h, &s.y, &s.z)
        .map_err(|e| e.at_step(s.n.saturating_sub(1)))?;
    Ok(ReversibleState {
        t,
        y: prev.y,
        z: prev.z,
        n: s.n.saturating_sub(1),
    })
}

/// Terminal state, streamed loss and grid of a forward solve.
#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub state: ReversibleState,
    pub loss: f64,
    pub record: StepRecord,
    pub counters: Counters,
}

struct ReversibleIntegrator<'a> {
    field: &'a dyn VectorField,
    tab: &'a ButcherTableau,
    lambda: f64,
    controller: Option<&'a ControllerConfig>,
    y: Vec<f64>,
    z: Vec<f64>,
    t: f64,
    pending: Option<(f64, Advanced)>,
    evals: usize,
    observer: &'a mut dyn FnMut(usize, usize, &[f64]) -> Result<()>,
}

impl Integrator for ReversibleIntegrator<'_> {
    fn attempt(&mut self, t: f64, t_next: f64, h: f64) -> Result<Option<f64>> {
        self.pending = None;
        // the error estimate comes from the forward sub-step only, so a
        // rejected trial costs a single Ψ evaluation
        self.evals += 1;
        let fwd = step(self.field, self.tab, t, &self.z, h)?;
        let y_next = couple(self.lambda, &self.y, &self.z, &fwd.increment);
        let err = match (self.controller, &fwd.error) {
            (Some(cfg), Some(est)) => {
                let e = error_norm(est, &self.y, &y_next, cfg);
                if !(e <= 1.0) {
                    return Ok(Some(e));
                }
                Some(e)
            }
            _ => None,
        };
        self.evals += 1;
        let back = step(self.field, self.tab, t_next, &y_next, -h)?;
        self.pending = Some((
            t_next,
            Advanced {
                z: sub(&self.z, &back.increment),
                y: y_next,
            },
        ));
        Ok(err)
    }

    fn commit(&mut self) -> Result<()> {
        let (t, next) = self
            .pending
            .take()
            .ok_or_else(|| Error::Config("commit without an accepted trial".into()))?;
        self.t = t;
        self.y = next.y;
        self.z = next.z;
        Ok(())
    }

    fn observe(&mut self, k: usize, n: usize) -> Result<()> {
        (self.observer)(k, n, &self.y)
    }
}

/// Integrates the reversible scheme from `y(t0) = y0`, calling `observer(k, n, yₙ)`
/// at every observation time. Nothing but the current `(y, z)` and the grid is kept.
#[allow(clippy::too_many_arguments)]
pub fn solve_forward_with(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    coupling: Coupling,
    t0: f64,
    y0: &[f64],
    schedule: &Schedule,
    obs_times: &[f64],
    observer: &mut dyn FnMut(usize, usize, &[f64]) -> Result<()>,
) -> Result<ForwardSolution> {
    if y0.len() != field.dim() {
        return Err(Error::Config(format!(
            "initial state has dimension {}, field expects {}",
            y0.len(),
            field.dim()
        )));
    }
    let controller = match schedule {
        Schedule::Adaptive { controller, .. } => Some(controller),
        Schedule::Fixed { .. } => None,
    };
    let mut integrator = ReversibleIntegrator {
        field,
        tab,
        lambda: coupling.value(),
        controller,
        y: y0.to_vec(),
        z: y0.to_vec(),
        t: t0,
        pending: None,
        evals: 0,
        observer,
    };
    let record = drive(schedule, tab.embedded_order(), t0, obs_times, &mut integrator)?;
    let n = record.n_steps();
    let counters = Counters {
        stored_state_peak: 2,
        stored_vector_peak: 2,
        step_evals_forward: integrator.evals,
        advances: n,
        ..Counters::default()
    };
    Ok(ForwardSolution {
        state: ReversibleState {
            t: integrator.t,
            y: integrator.y,
            z: integrator.z,
            n,
        },
        loss: 0.0,
        record,
        counters,
    })
}

/// Forward solve that accumulates `loss` over the observations as it goes.
#[allow(clippy::too_many_arguments)]
pub fn solve_forward(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    coupling: Coupling,
    t0: f64,
    y0: &[f64],
    schedule: &Schedule,
    obs_times: &[f64],
    loss: &dyn ObservationLoss,
) -> Result<ForwardSolution> {
    let mut total = 0.0;
    let mut observer = |k: usize, _n: usize, y: &[f64]| -> Result<()> {
        total += loss.value(k, y)?;
        Ok(())
    };
    let mut sol = solve_forward_with(field, tab, coupling, t0, y0, schedule, obs_times, &mut observer)?;
    sol.loss = total;
    Ok(sol)
}

/// Forward solve returning the observed states instead of a loss.
#[allow(clippy::too_many_arguments)]
pub fn solve_observed(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    coupling: Coupling,
    t0: f64,
    y0: &[f64],
    schedule: &Schedule,
    obs_times: &[f64],
) -> Result<(ForwardSolution, Vec<Vec<f64>>)> {
    let mut observed = Vec::with_capacity(obs_times.len());
    let mut observer = |_k: usize, _n: usize, y: &[f64]| -> Result<()> {
        observed.push(y.to_vec());
        Ok(())
    };
    let sol = solve_forward_with(field, tab, coupling, t0, y0, schedule, obs_times, &mut observer)?;
    Ok((sol, observed))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BackpropOptions {
    /// When set, every reconstructed state is stepped forward again and the
    /// relative mismatch against the state it came from must stay below this.
    pub verify_tolerance: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub adjoint: AdjointState,
    /// `(y₀, z₀)` as rebuilt by the backward pass.
    pub initial: ReversibleState,
    pub counters: Counters,
}

fn breakdown(n: usize, e: Error) -> Error {
    match e {
        Error::Divergence { stage, t, .. } => Error::ReversibilityBreakdown {
            step: n,
            detail: format!("non-finite value at stage {stage}, t = {t}"),
        },
        Error::Domain(detail) => Error::ReversibilityBreakdown { step: n, detail },
        other => other,
    }
}

fn inject(
    loss: &dyn ObservationLoss,
    record: &StepRecord,
    next_obs: &mut usize,
    n: usize,
    y: &[f64],
    y_bar: &mut [f64],
) -> Result<()> {
    while *next_obs > 0 && record.observation_steps[*next_obs - 1] == n {
        *next_obs -= 1;
        let g = loss.gradient(*next_obs, y)?;
        for (a, b) in y_bar.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(())
}

/// Reverse sweep that rebuilds each state from its successor and pulls the
/// adjoint back through both sub-steps. Observation gradients are injected at
/// the reconstructed states.
pub fn reversible_backprop(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    coupling: Coupling,
    terminal: &ReversibleState,
    record: &StepRecord,
    loss: &dyn ObservationLoss,
    options: BackpropOptions,
) -> Result<BackwardResult> {
    let lambda = coupling.value();
    let n_steps = record.n_steps();
    if terminal.n != n_steps {
        return Err(Error::Config(format!(
            "terminal state is at step {}, record has {n_steps} steps",
            terminal.n
        )));
    }
    let d = terminal.y.len();
    let mut occupancy = Occupancy::default();
    let mut counters = Counters::default();

    let (mut y, mut z) = (terminal.y.clone(), terminal.z.clone());
    occupancy.hold(2);
    let mut y_bar = vec![0.0; d];
    let mut z_bar = vec![0.0; d];
    let mut theta_bar = vec![0.0; field.num_params()];
    occupancy.hold(2);
    let mut next_obs = record.observation_steps.len();
    inject(loss, record, &mut next_obs, n_steps, &y, &mut y_bar)?;

    for n in (0..n_steps).rev() {
        let (t, t_next, h) = (record.grid.time(n), record.grid.time(n + 1), record.grid.step(n));

        let back = step(field, tab, t_next, &y, -h).map_err(|e| breakdown(n, e))?;
        let z_prev = add(&z, &back.increment);
        let fwd = step(field, tab, t, &z_prev, h).map_err(|e| breakdown(n, e))?;
        let y_prev = uncouple(lambda, &y, &z_prev, &fwd.increment);
        counters.step_evals_backward += 2;
        if y_prev.iter().chain(&z_prev).any(|v| !v.is_finite()) {
            return Err(Error::ReversibilityBreakdown {
                step: n,
                detail: "reconstructed state is not finite".into(),
            });
        }
        if let Some(tol) = options.verify_tolerance {
            let y_again = couple(lambda, &y_prev, &z_prev, &fwd.increment);
            let back_again = step(field, tab, t_next, &y_again, -h).map_err(|e| breakdown(n, e))?;
            counters.step_evals_backward += 1;
            let again = ReversibleState {
                t: t_next,
                y: y_again,
                z: sub(&z_prev, &back_again.increment),
                n: n + 1,
            };
            let reference = ReversibleState {
                t: t_next,
                y: y.clone(),
                z: z.clone(),
                n: n + 1,
            };
            let mismatch = again.relative_distance(&reference);
            if !(mismatch <= tol) {
                return Err(Error::ReversibilityBreakdown {
                    step: n,
                    detail: format!("local mismatch {mismatch:e} exceeds {tol:e}"),
                });
            }
        }

        // z_{n+1} = zₙ − Ψ_{−h}(t_{n+1}, y_{n+1})
        let (gy_back, gth_back) = step_vjp(field, tab, t_next, &y, -h, &z_bar).map_err(|e| breakdown(n, e))?;
        let y_bar_total = sub(&y_bar, &gy_back);
        // y_{n+1} = λ·yₙ + (1−λ)·zₙ + Ψ_h(tₙ, zₙ)
        let (gz_fwd, gth_fwd) = step_vjp(field, tab, t, &z_prev, h, &y_bar_total).map_err(|e| breakdown(n, e))?;
        counters.vjp_evals += 2;

        for ((th, b), f) in theta_bar.iter_mut().zip(&gth_back).zip(&gth_fwd) {
            *th += f - b;
        }
        z_bar = z_bar
            .iter()
            .zip(&y_bar_total)
            .zip(&gz_fwd)
            .map(|((zb, yb), g)| zb + (1.0 - lambda) * yb + g)
            .collect();
        y_bar = y_bar_total.iter().map(|v| lambda * v).collect();
        y = y_prev;
        z = z_prev;
        inject(loss, record, &mut next_obs, n, &y, &mut y_bar)?;
    }

    counters.stored_state_peak = 2;
    counters.stored_vector_peak = occupancy.peak();
    Ok(BackwardResult {
        adjoint: AdjointState {
            y_bar,
            z_bar,
            theta_bar,
        },
        initial: ReversibleState {
            t: record.grid.time(0),
            y,
            z,
            n: 0,
        },
        counters,
    })
}

/// Runs the backward reconstruction alone, returning the rebuilt `(y₀, z₀)`.
pub fn reconstruct(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    coupling: Coupling,
    terminal: &ReversibleState,
    record: &StepRecord,
) -> Result<ReversibleState> {
    let lambda = coupling.value();
    let (mut y, mut z) = (terminal.y.clone(), terminal.z.clone());
    for n in (0..record.n_steps()).rev() {
        let (t, t_next, h) = (record.grid.time(n), record.grid.time(n + 1), record.grid.step(n));
        let prev = retreat(field, tab, lambda, t, t_next, h, &y, &z).map_err(|e| breakdown(n, e))?;
        if prev.y.iter().chain(&prev.z).any(|v| !v.is_finite()) {
            return Err(Error::ReversibilityBreakdown {
                step: n,
                detail: "reconstructed state is not finite".into(),
            });
        }
        y = prev.y;
        z = prev.z;
    }
    Ok(ReversibleState {
        t: record.grid.time(0),
        y,
        z,
        n: 0,
    })
}

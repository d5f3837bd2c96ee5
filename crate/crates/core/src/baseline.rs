//! Comparison gradient engines: a full-tape reverse sweep and binomial checkpointing.
//!
//! Both differentiate a [`Scheme`], either a plain Runge-Kutta solve or the
//! reversible coupled scheme treated as an ordinary one-step method on the
//! stacked state `(y, z)`. Neither uses the closed-form inverse.

use serde::{Deserialize, Serialize};

use crate::counters::{Counters, Occupancy};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::loss::ObservationLoss;
use crate::reversible::{advance as coupled_advance, Coupling};
use crate::rk::{step, step_vjp, ButcherTableau};
use crate::step_control::{drive, error_norm, ControllerConfig, Grid, Integrator, Schedule, StepRecord};

/// The one-step map being differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    /// `y_{n+1} = yₙ + Ψ_h(tₙ, yₙ)`
    Plain,
    /// The coupled scheme on `(y, z)`.
    Reversible { lambda: Coupling },
}

impl Scheme {
    pub fn reversible(lambda: f64) -> Result<Self> {
        Ok(Scheme::Reversible {
            lambda: Coupling::new(lambda)?,
        })
    }

    /// Number of `d`-vectors in one scheme state.
    pub fn width(&self) -> usize {
        match self {
            Scheme::Plain => 1,
            Scheme::Reversible { .. } => 2,
        }
    }

    pub fn initial(&self, y0: &[f64]) -> Vec<f64> {
        match self {
            Scheme::Plain => y0.to_vec(),
            Scheme::Reversible { .. } => [y0, y0].concat(),
        }
    }

    /// Collapses the adjoint of the initial scheme state onto `y(0)`.
    pub fn initial_gradient(&self, bar: &[f64], d: usize) -> Vec<f64> {
        match self {
            Scheme::Plain => bar.to_vec(),
            Scheme::Reversible { .. } => bar[..d].iter().zip(&bar[d..]).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Advances one scheme state.
#[allow(clippy::too_many_arguments)]
fn scheme_advance(
    scheme: Scheme,
    field: &dyn VectorField,
    tab: &ButcherTableau,
    t: f64,
    t_next: f64,
    h: f64,
    state: &[f64],
    d: usize,
) -> Result<Vec<f64>> {
    match scheme {
        Scheme::Plain => {
            let out = step(field, tab, t, state, h)?;
            Ok(state.iter().zip(&out.increment).map(|(a, b)| a + b).collect())
        }
        Scheme::Reversible { lambda } => {
            let (y, z) = state.split_at(d);
            let next = coupled_advance(field, tab, lambda.value(), t, t_next, h, y, z)?;
            Ok([next.y, next.z].concat())
        }
    }
}

/// Chain rule through one scheme step.
///
/// `next` is the successor state if it is at hand; the coupled scheme needs
/// its `y` part and recomputes it otherwise.
#[allow(clippy::too_many_arguments)]
fn scheme_pullback(
    scheme: Scheme,
    field: &dyn VectorField,
    tab: &ButcherTableau,
    t: f64,
    t_next: f64,
    h: f64,
    state: &[f64],
    next: Option<&[f64]>,
    bar_next: &[f64],
    theta_bar: &mut [f64],
    counters: &mut Counters,
    d: usize,
) -> Result<Vec<f64>> {
    match scheme {
        Scheme::Plain => {
            let (gy, gth) = step_vjp(field, tab, t, state, h, bar_next)?;
            counters.vjp_evals += 1;
            for (a, b) in theta_bar.iter_mut().zip(&gth) {
                *a += b;
            }
            Ok(bar_next.iter().zip(&gy).map(|(a, b)| a + b).collect())
        }
        Scheme::Reversible { lambda } => {
            let lam = lambda.value();
            let (y, z) = state.split_at(d);
            let u = match next {
                Some(s) => s[..d].to_vec(),
                None => {
                    let out = step(field, tab, t, z, h)?;
                    counters.step_evals_backward += 1;
                    y.iter()
                        .zip(z)
                        .zip(&out.increment)
                        .map(|((a, b), p)| lam * a + (1.0 - lam) * b + p)
                        .collect()
                }
            };
            let (u_bar, v_bar) = bar_next.split_at(d);
            // v = z − Ψ_{−h}(t_next, u)   with u = λy + (1−λ)z + Ψ_h(t, z)
            let (gu, gth_v) = step_vjp(field, tab, t_next, &u, -h, v_bar)?;
            let u_total: Vec<f64> = u_bar.iter().zip(&gu).map(|(a, b)| a - b).collect();
            let (gz, gth_u) = step_vjp(field, tab, t, z, h, &u_total)?;
            counters.vjp_evals += 2;
            for ((a, b), c) in theta_bar.iter_mut().zip(&gth_u).zip(&gth_v) {
                *a += b - c;
            }
            let mut bar = Vec::with_capacity(2 * d);
            bar.extend(u_total.iter().map(|a| lam * a));
            bar.extend(
                v_bar
                    .iter()
                    .zip(&u_total)
                    .zip(&gz)
                    .map(|((v, a), g)| v + (1.0 - lam) * a + g),
            );
            Ok(bar)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    /// Largest number of `f64` values the full tape may hold.
    pub max_tape_values: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            max_tape_values: 100_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineGradient {
    pub loss: f64,
    pub theta_bar: Vec<f64>,
    pub y0_bar: Vec<f64>,
    pub counters: Counters,
    pub record: StepRecord,
}

enum Keep {
    Nothing,
    Tape { limit: usize },
    Checkpoints { budget: usize },
}

struct SchemeIntegrator<'a> {
    scheme: Scheme,
    field: &'a dyn VectorField,
    tab: &'a ButcherTableau,
    controller: Option<&'a ControllerConfig>,
    loss: Option<&'a dyn ObservationLoss>,
    d: usize,
    state: Vec<f64>,
    pending: Option<Vec<f64>>,
    step_index: usize,
    evals: usize,
    loss_total: f64,
    keep: Keep,
    tape: Vec<Vec<f64>>,
    checkpoints: Vec<(usize, Vec<f64>)>,
    spacing: usize,
    occupancy: Occupancy,
}

impl<'a> SchemeIntegrator<'a> {
    fn new(
        scheme: Scheme,
        field: &'a dyn VectorField,
        tab: &'a ButcherTableau,
        schedule: &'a Schedule,
        loss: Option<&'a dyn ObservationLoss>,
        y0: &[f64],
        keep: Keep,
    ) -> Result<Self> {
        let d = field.dim();
        if y0.len() != d {
            return Err(Error::Config(format!(
                "initial state has dimension {}, field expects {d}",
                y0.len()
            )));
        }
        let controller = match schedule {
            Schedule::Adaptive { controller, .. } => Some(controller),
            Schedule::Fixed { .. } => None,
        };
        let state = scheme.initial(y0);
        let mut it = SchemeIntegrator {
            scheme,
            field,
            tab,
            controller,
            loss,
            d,
            state,
            pending: None,
            step_index: 0,
            evals: 0,
            loss_total: 0.0,
            keep,
            tape: Vec::new(),
            checkpoints: Vec::new(),
            spacing: 1,
            occupancy: Occupancy::default(),
        };
        it.keep_state()?;
        Ok(it)
    }

    /// Stores the current state according to the keep policy.
    fn keep_state(&mut self) -> Result<()> {
        let n = self.step_index;
        match self.keep {
            Keep::Nothing => {}
            Keep::Tape { limit } => {
                if (self.tape.len() + 1) * self.state.len() > limit {
                    return Err(Error::Resource(format!(
                        "full tape would exceed {limit} stored values at step {n}"
                    )));
                }
                self.tape.push(self.state.clone());
                self.occupancy.hold(1);
            }
            Keep::Checkpoints { budget } => {
                if n % self.spacing != 0 {
                    return Ok(());
                }
                if self.checkpoints.len() == budget {
                    let keep_every = 2 * self.spacing;
                    let before = self.checkpoints.len();
                    self.checkpoints.retain(|(k, _)| k % keep_every == 0);
                    self.occupancy.release(before - self.checkpoints.len());
                    self.spacing = keep_every;
                    if n % self.spacing != 0 {
                        return Ok(());
                    }
                }
                self.checkpoints.push((n, self.state.clone()));
                self.occupancy.hold(1);
            }
        }
        Ok(())
    }
}

impl Integrator for SchemeIntegrator<'_> {
    fn attempt(&mut self, t: f64, t_next: f64, h: f64) -> Result<Option<f64>> {
        self.pending = None;
        let d = self.d;
        match (self.scheme, self.controller) {
            (Scheme::Plain, controller) => {
                self.evals += 1;
                let out = step(self.field, self.tab, t, &self.state, h)?;
                let next: Vec<f64> = self.state.iter().zip(&out.increment).map(|(a, b)| a + b).collect();
                let err = match (controller, &out.error) {
                    (Some(cfg), Some(est)) => Some(error_norm(est, &self.state, &next, cfg)),
                    _ => None,
                };
                self.pending = Some(next);
                Ok(err)
            }
            (Scheme::Reversible { lambda }, Some(cfg)) => {
                // same arithmetic and rejection rule as the reversible solver,
                // so both produce identical adaptive grids
                let lam = lambda.value();
                let (y, z) = self.state.split_at(d);
                self.evals += 1;
                let fwd = step(self.field, self.tab, t, z, h)?;
                let u: Vec<f64> = y
                    .iter()
                    .zip(z)
                    .zip(&fwd.increment)
                    .map(|((a, b), p)| lam * a + (1.0 - lam) * b + p)
                    .collect();
                let err = fwd.error.as_ref().map(|est| error_norm(est, y, &u, cfg));
                if let Some(e) = err {
                    if !(e <= 1.0) {
                        return Ok(Some(e));
                    }
                }
                self.evals += 1;
                let back = step(self.field, self.tab, t_next, &u, -h)?;
                let v: Vec<f64> = z.iter().zip(&back.increment).map(|(a, b)| a - b).collect();
                self.pending = Some([u, v].concat());
                Ok(err)
            }
            (scheme @ Scheme::Reversible { .. }, None) => {
                self.evals += 2;
                self.pending = Some(scheme_advance(scheme, self.field, self.tab, t, t_next, h, &self.state, d)?);
                Ok(None)
            }
        }
    }

    fn commit(&mut self) -> Result<()> {
        self.state = self
            .pending
            .take()
            .ok_or_else(|| Error::Config("commit without an accepted trial".into()))?;
        self.step_index += 1;
        self.keep_state()
    }

    fn observe(&mut self, k: usize, _n: usize) -> Result<()> {
        if let Some(loss) = self.loss {
            self.loss_total += loss.value(k, &self.state[..self.d])?;
        }
        Ok(())
    }
}

/// Result of [`solve_scheme`].
#[derive(Clone, Debug)]
pub struct SchemeSolution {
    /// Terminal scheme state (`y`, or `y` followed by `z`).
    pub state: Vec<f64>,
    pub loss: f64,
    pub record: StepRecord,
    pub counters: Counters,
}

/// Integrates `scheme` without storing anything beyond the current state.
#[allow(clippy::too_many_arguments)]
pub fn solve_scheme(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    scheme: Scheme,
    t0: f64,
    y0: &[f64],
    schedule: &Schedule,
    obs_times: &[f64],
    loss: Option<&dyn ObservationLoss>,
) -> Result<SchemeSolution> {
    let mut it = SchemeIntegrator::new(scheme, field, tab, schedule, loss, y0, Keep::Nothing)?;
    let record = drive(schedule, tab.embedded_order(), t0, obs_times, &mut it)?;
    let counters = Counters {
        stored_state_peak: 1,
        stored_vector_peak: scheme.width(),
        step_evals_forward: it.evals,
        advances: record.n_steps(),
        ..Counters::default()
    };
    Ok(SchemeSolution {
        state: it.state,
        loss: it.loss_total,
        record,
        counters,
    })
}

fn inject(
    loss: &dyn ObservationLoss,
    record: &StepRecord,
    next_obs: &mut usize,
    n: usize,
    y: &[f64],
    bar: &mut [f64],
    value: Option<&mut f64>,
) -> Result<()> {
    let mut total = 0.0;
    while *next_obs > 0 && record.observation_steps[*next_obs - 1] == n {
        *next_obs -= 1;
        let g = loss.gradient(*next_obs, y)?;
        for (a, b) in bar.iter_mut().zip(&g) {
            *a += b;
        }
        if value.is_some() {
            total += loss.value(*next_obs, y)?;
        }
    }
    if let Some(v) = value {
        *v += total;
    }
    Ok(())
}

/// Stores every state on the forward pass, then runs the chain rule backwards.
#[allow(clippy::too_many_arguments)]
pub fn full_tape_backprop(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    scheme: Scheme,
    t0: f64,
    y0: &[f64],
    schedule: &Schedule,
    obs_times: &[f64],
    loss: &dyn ObservationLoss,
    options: BaselineOptions,
) -> Result<BaselineGradient> {
    let keep = Keep::Tape {
        limit: options.max_tape_values,
    };
    let mut it = SchemeIntegrator::new(scheme, field, tab, schedule, Some(loss), y0, keep)?;
    let record = drive(schedule, tab.embedded_order(), t0, obs_times, &mut it)?;
    let d = it.d;
    let tape = std::mem::take(&mut it.tape);
    let n_steps = record.n_steps();
    let mut counters = Counters {
        step_evals_forward: it.evals,
        advances: n_steps,
        ..Counters::default()
    };

    let mut bar = vec![0.0; scheme.width() * d];
    let mut theta_bar = vec![0.0; field.num_params()];
    let mut next_obs = record.observation_steps.len();
    inject(loss, &record, &mut next_obs, n_steps, &tape[n_steps][..d], &mut bar, None)?;
    for n in (0..n_steps).rev() {
        let (t, t_next, h) = (record.grid.time(n), record.grid.time(n + 1), record.grid.step(n));
        bar = scheme_pullback(
            scheme,
            field,
            tab,
            t,
            t_next,
            h,
            &tape[n],
            Some(&tape[n + 1]),
            &bar,
            &mut theta_bar,
            &mut counters,
            d,
        )?;
        inject(loss, &record, &mut next_obs, n, &tape[n][..d], &mut bar, None)?;
    }
    counters.stored_state_peak = it.occupancy.peak();
    counters.stored_vector_peak = (it.occupancy.peak() + 1) * scheme.width();
    Ok(BaselineGradient {
        loss: it.loss_total,
        y0_bar: scheme.initial_gradient(&bar, d),
        theta_bar,
        counters,
        record,
    })
}

/// `C(s + r, s)`, saturating.
fn beta(s: usize, r: usize) -> u128 {
    let mut acc: u128 = 1;
    for i in 1..=s.min(r) as u128 {
        let top = (s.max(r) as u128) + i;
        acc = match acc.checked_mul(top) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    acc
}

fn repetition_number(l: usize, snaps: usize) -> usize {
    let mut r = 0;
    while beta(snaps, r) < l as u128 {
        r += 1;
    }
    r
}

/// Optimal number of steps to advance before placing the next checkpoint
/// when reversing `l` steps with `free` slots beside the held start state.
pub fn binomial_split(l: usize, free: usize) -> usize {
    debug_assert!(l >= 2 && free >= 1);
    let snaps = free + 1;
    let r = repetition_number(l, snaps);
    let lower = if r >= 2 { beta(snaps, r - 2) } else { 1 };
    let alt = (l as u128).saturating_sub(beta(snaps - 1, r));
    (lower.max(alt) as usize).clamp(1, l - 1)
}

/// Forward advances a binomial schedule needs to reverse `n_steps` steps with
/// `c` stored states (the initial one included), counting the first pass.
pub fn binomial_advances(n_steps: usize, c: usize) -> u128 {
    if n_steps == 0 {
        return 0;
    }
    let snaps = c.max(1);
    let r = repetition_number(n_steps, snaps);
    let base = r as u128 * n_steps as u128;
    let extra = if r == 0 { 0 } else { beta(snaps + 1, r - 1) };
    base.saturating_sub(extra) + 1
}

struct Revolver<'a> {
    scheme: Scheme,
    field: &'a dyn VectorField,
    tab: &'a ButcherTableau,
    grid: &'a Grid,
    record: &'a StepRecord,
    loss: &'a dyn ObservationLoss,
    d: usize,
    n_steps: usize,
    bar: Option<Vec<f64>>,
    theta_bar: Vec<f64>,
    next_obs: usize,
    loss_total: Option<f64>,
    counters: Counters,
    occupancy: Occupancy,
}

impl Revolver<'_> {
    fn advance_from(&mut self, start: usize, state: &[f64], steps: usize) -> Result<Vec<f64>> {
        let mut s = state.to_vec();
        for n in start..start + steps {
            let (t, t_next, h) = (self.grid.time(n), self.grid.time(n + 1), self.grid.step(n));
            s = scheme_advance(self.scheme, self.field, self.tab, t, t_next, h, &s, self.d).map_err(|e| e.at_step(n))?;
        }
        self.counters.advances += steps;
        self.counters.step_evals_backward += steps * self.scheme.width();
        Ok(s)
    }

    fn inject_at(&mut self, n: usize, y: &[f64]) -> Result<()> {
        let bar = self.bar.as_mut().expect("adjoint seeded");
        inject(self.loss, self.record, &mut self.next_obs, n, y, bar, self.loss_total.as_mut())
    }

    /// Pulls the adjoint from `n+1` back to `n`, with `state` the state at `n`.
    fn base(&mut self, n: usize, state: &[f64]) -> Result<()> {
        let mut next = None;
        if self.bar.is_none() {
            debug_assert_eq!(n + 1, self.n_steps);
            let s_next = self.advance_from(n, state, 1)?;
            self.bar = Some(vec![0.0; s_next.len()]);
            self.inject_at(n + 1, &s_next[..self.d])?;
            next = Some(s_next);
        }
        let (t, t_next, h) = (self.grid.time(n), self.grid.time(n + 1), self.grid.step(n));
        let bar_next = self.bar.take().expect("adjoint seeded");
        let bar = scheme_pullback(
            self.scheme,
            self.field,
            self.tab,
            t,
            t_next,
            h,
            state,
            next.as_deref(),
            &bar_next,
            &mut self.theta_bar,
            &mut self.counters,
            self.d,
        )?;
        self.bar = Some(bar);
        self.inject_at(n, &state[..self.d])
    }

    /// Reverses steps `a..b` given the held state at `a`.
    fn reverse(&mut self, a: usize, b: usize, free: usize, state_a: &[f64]) -> Result<()> {
        if b == a + 1 {
            return self.base(a, state_a);
        }
        if free == 0 {
            for n in (a..b).rev() {
                let s = self.advance_from(a, state_a, n - a)?;
                self.base(n, &s)?;
            }
            return Ok(());
        }
        let m = a + binomial_split(b - a, free);
        let s_m = self.advance_from(a, state_a, m - a)?;
        self.occupancy.hold(1);
        self.reverse(m, b, free - 1, &s_m)?;
        self.occupancy.release(1);
        self.reverse(a, m, free, state_a)
    }
}

/// Gradient by recomputation from at most `c` stored scheme states.
///
/// Fixed schedules use the offline binomial placement. Adaptive schedules
/// use an online variant: the forward pass keeps evenly spaced checkpoints,
/// halving them whenever the budget fills, and each segment between
/// checkpoints is then reversed binomially with the slots left over.
#[allow(clippy::too_many_arguments)]
pub fn checkpointed_backprop(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    scheme: Scheme,
    t0: f64,
    y0: &[f64],
    schedule: &Schedule,
    obs_times: &[f64],
    loss: &dyn ObservationLoss,
    c: usize,
) -> Result<BaselineGradient> {
    if c < 2 {
        return Err(Error::Config(format!("checkpoint budget must be at least 2, got {c}")));
    }
    let d = field.dim();
    if y0.len() != d {
        return Err(Error::Config(format!(
            "initial state has dimension {}, field expects {d}",
            y0.len()
        )));
    }
    match schedule {
        Schedule::Fixed { h, n_steps } => {
            let record = StepRecord::uniform(t0, *h, *n_steps, obs_times)?;
            let mut rev = Revolver {
                scheme,
                field,
                tab,
                grid: &record.grid,
                record: &record,
                loss,
                d,
                n_steps: *n_steps,
                bar: None,
                theta_bar: vec![0.0; field.num_params()],
                next_obs: record.observation_steps.len(),
                loss_total: Some(0.0),
                counters: Counters::default(),
                occupancy: Occupancy::default(),
            };
            let s0 = scheme.initial(y0);
            rev.occupancy.hold(1);
            rev.reverse(0, *n_steps, c - 1, &s0)?;
            let mut counters = rev.counters;
            // the first sweep is the forward pass, everything else recomputation
            let first = *n_steps * scheme.width();
            counters.step_evals_forward = first;
            counters.step_evals_backward -= first;
            counters.stored_state_peak = rev.occupancy.peak();
            counters.stored_vector_peak = (rev.occupancy.peak() + 2) * scheme.width();
            let bar = rev.bar.expect("adjoint seeded");
            Ok(BaselineGradient {
                loss: rev.loss_total.unwrap_or(0.0),
                y0_bar: scheme.initial_gradient(&bar, d),
                theta_bar: rev.theta_bar,
                counters,
                record: record.clone(),
            })
        }
        Schedule::Adaptive { .. } => {
            let keep = Keep::Checkpoints { budget: c };
            let mut it = SchemeIntegrator::new(scheme, field, tab, schedule, Some(loss), y0, keep)?;
            let record = drive(schedule, tab.embedded_order(), t0, obs_times, &mut it)?;
            let n_steps = record.n_steps();
            let mut checkpoints = std::mem::take(&mut it.checkpoints);
            let mut occupancy = it.occupancy;
            if checkpoints.last().is_some_and(|(k, _)| *k == n_steps) {
                checkpoints.pop();
                occupancy.release(1);
            }
            let mut rev = Revolver {
                scheme,
                field,
                tab,
                grid: &record.grid,
                record: &record,
                loss,
                d,
                n_steps,
                bar: None,
                theta_bar: vec![0.0; field.num_params()],
                next_obs: record.observation_steps.len(),
                loss_total: None,
                counters: Counters::default(),
                occupancy,
            };
            let mut end = n_steps;
            while let Some((k, state)) = checkpoints.pop() {
                let free = c - (checkpoints.len() + 1);
                rev.reverse(k, end, free, &state)?;
                rev.occupancy.release(1);
                end = k;
            }
            let mut counters = rev.counters;
            counters.step_evals_forward = it.evals;
            counters.advances += n_steps;
            counters.stored_state_peak = rev.occupancy.peak();
            counters.stored_vector_peak = (rev.occupancy.peak() + 2) * scheme.width();
            let bar = rev.bar.expect("adjoint seeded");
            Ok(BaselineGradient {
                loss: it.loss_total,
                y0_bar: scheme.initial_gradient(&bar, d),
                theta_bar: rev.theta_bar,
                counters,
                record: record.clone(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{LinearField, Mlp};
    use crate::loss::{SquaredError, WeightedSum};
    use crate::rk::Method;

    /// Brute-force minimum over every first-split position.
    fn dp_table(n_max: usize, s_max: usize) -> Vec<Vec<u64>> {
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

    #[test]
    fn closed_form_cost_matches_brute_force() {
        let dp = dp_table(64, 7);
        for n in 1..=64 {
            for c in 2..=8 {
                assert_eq!(binomial_advances(n, c), dp[n][c - 1] as u128 + 1, "n = {n}, c = {c}");
            }
        }
        assert_eq!(binomial_advances(16, 2), 46);
    }

    #[test]
    fn schedule_advances_match_brute_force() {
        let dp = dp_table(64, 7);
        let f = LinearField::scalar(-0.5);
        let tab = Method::Euler.tableau();
        let loss = WeightedSum::new(vec![1.0]);
        for n in 1..=64 {
            for c in 2..=8 {
                let schedule = Schedule::Fixed { h: 0.01, n_steps: n };
                let t_end = schedule.t_end(0.0);
                let g = checkpointed_backprop(&f, &tab, Scheme::Plain, 0.0, &[1.0], &schedule, &[t_end], &loss, c)
                    .unwrap();
                assert_eq!(g.counters.advances as u64, dp[n][c - 1] + 1, "n = {n}, c = {c}");
                assert!(g.counters.stored_state_peak <= c);
            }
        }
    }

    #[test]
    fn ample_budget_is_a_single_forward_pass() {
        let f = Mlp::seeded(2, 4, 0);
        let tab = Method::Rk4.tableau();
        let schedule = Schedule::Fixed { h: 0.05, n_steps: 20 };
        let loss = WeightedSum::new(vec![1.0, 1.0]);
        let g = checkpointed_backprop(&f, &tab, Scheme::Plain, 0.0, &[0.1, 0.2], &schedule, &[1.0], &loss, 20).unwrap();
        assert_eq!(g.counters.advances, 20);
        assert_eq!(g.counters.step_evals_backward, 0);
    }

    #[test]
    fn budget_below_two_is_rejected() {
        let f = LinearField::scalar(-1.0);
        let schedule = Schedule::Fixed { h: 0.1, n_steps: 4 };
        let loss = WeightedSum::new(vec![1.0]);
        let err = checkpointed_backprop(&f, &Method::Euler.tableau(), Scheme::Plain, 0.0, &[1.0], &schedule, &[], &loss, 1)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn tape_limit_is_a_resource_error() {
        let f = LinearField::scalar(-1.0);
        let schedule = Schedule::Fixed { h: 0.01, n_steps: 100 };
        let loss = WeightedSum::new(vec![1.0]);
        let opts = BaselineOptions { max_tape_values: 50 };
        let err = full_tape_backprop(&f, &Method::Euler.tableau(), Scheme::Plain, 0.0, &[1.0], &schedule, &[1.0], &loss, opts)
            .unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
    }

    #[test]
    fn plain_euler_gradient_by_hand() {
        // y_N = (1 + hα)^N·x, L = y_N
        let (alpha, h, n, x) = (-0.7f64, 0.1, 5, 2.0);
        let f = LinearField::scalar(alpha);
        let schedule = Schedule::Fixed { h, n_steps: n };
        let loss = WeightedSum::new(vec![1.0]);
        let t_end = schedule.t_end(0.0);
        let g = full_tape_backprop(&f, &Method::Euler.tableau(), Scheme::Plain, 0.0, &[x], &schedule, &[t_end], &loss, BaselineOptions::default())
            .unwrap();
        let amp = 1.0 + h * alpha;
        approx::assert_relative_eq!(g.loss, amp.powi(n as i32) * x, max_relative = 1e-14);
        approx::assert_relative_eq!(g.y0_bar[0], amp.powi(n as i32), max_relative = 1e-14);
        approx::assert_relative_eq!(g.theta_bar[0], n as f64 * amp.powi(n as i32 - 1) * h * x, max_relative = 1e-14);
        assert_eq!(g.counters.stored_state_peak, n + 1);
    }

    #[test]
    fn checkpointed_matches_full_tape_for_both_schemes() {
        let f = Mlp::seeded(2, 6, 4);
        let tab = Method::Rk4.tableau();
        let schedule = Schedule::Fixed { h: 0.02, n_steps: 37 };
        let obs = [0.0, 0.2, 0.5, 0.74];
        let loss = SquaredError::mse(vec![vec![0.1, 0.0], vec![0.3, -0.2], vec![0.0, 0.5], vec![1.0, 1.0]]);
        for scheme in [Scheme::Plain, Scheme::reversible(0.99).unwrap()] {
            let tape = full_tape_backprop(&f, &tab, scheme, 0.0, &[0.4, -0.6], &schedule, &obs, &loss, BaselineOptions::default())
                .unwrap();
            for c in [2, 3, 5, 40] {
                let ck = checkpointed_backprop(&f, &tab, scheme, 0.0, &[0.4, -0.6], &schedule, &obs, &loss, c).unwrap();
                approx::assert_relative_eq!(ck.loss, tape.loss, max_relative = 1e-14);
                for (a, b) in ck.theta_bar.iter().zip(&tape.theta_bar).chain(ck.y0_bar.iter().zip(&tape.y0_bar)) {
                    approx::assert_relative_eq!(*a, *b, max_relative = 1e-12, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn online_checkpointing_matches_full_tape_on_adaptive_grid() {
        let f = crate::field::DoublePendulumField::default();
        let tab = Method::Bosh3.tableau();
        let schedule = Schedule::Adaptive {
            t_end: 0.8,
            controller: ControllerConfig::default(),
        };
        let obs = [0.4, 0.8];
        let loss = WeightedSum::new(vec![1.0, -1.0, 0.5, 0.25]);
        let y0 = [1.0, 0.8, 0.0, 0.0];
        for scheme in [Scheme::Plain, Scheme::reversible(0.99).unwrap()] {
            let tape =
                full_tape_backprop(&f, &tab, scheme, 0.0, &y0, &schedule, &obs, &loss, BaselineOptions::default()).unwrap();
            for c in [2, 4, 9] {
                let ck = checkpointed_backprop(&f, &tab, scheme, 0.0, &y0, &schedule, &obs, &loss, c).unwrap();
                assert_eq!(ck.record, tape.record);
                assert!(ck.counters.stored_state_peak <= c);
                approx::assert_relative_eq!(ck.loss, tape.loss, max_relative = 1e-14);
                for (a, b) in ck.y0_bar.iter().zip(&tape.y0_bar) {
                    approx::assert_relative_eq!(*a, *b, max_relative = 1e-12);
                }
            }
        }
    }
}

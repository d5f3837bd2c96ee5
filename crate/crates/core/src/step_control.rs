//! Adaptive step-size selection driven by embedded error estimates.
//!
//! [`AdaptiveStepper`] proposes trial steps, consumes error norms and keeps the
//! accepted grid in a [`StepRecord`]. The record is what lets a backward pass
//! retrace exactly the same grid.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub atol: f64,
    pub rtol: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// Proportional gain; defaults to `0.4/(k_emb + 1)`.
    pub k_p: Option<f64>,
    /// Integral gain; defaults to `0.3/(k_emb + 1)`.
    pub k_i: Option<f64>,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            atol: 1e-6,
            rtol: 1e-6,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            k_p: None,
            k_i: None,
            h_init: 1e-2,
            h_min: 1e-10,
            h_max: 1.0,
        }
    }
}

/// Controller gains `(k_P, k_I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gains {
    pub proportional: f64,
    pub integral: f64,
}

const ERR_FLOOR: f64 = 1e-10;

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.atol > 0.0
            && self.rtol > 0.0
            && self.h_min > 0.0
            && self.h_min <= self.h_init
            && self.h_init <= self.h_max
            && self.safety > 0.0
            && self.min_factor > 0.0
            && self.min_factor <= self.max_factor;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid controller configuration {self:?}")))
        }
    }

    pub fn gains(&self, embedded_order: usize) -> Gains {
        let scale = 1.0 / (embedded_order as f64 + 1.0);
        Gains {
            proportional: self.k_p.unwrap_or(0.4 * scale),
            integral: self.k_i.unwrap_or(0.3 * scale),
        }
    }

    /// Same controller with both tolerances scaled by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        ControllerConfig {
            atol: self.atol * factor,
            rtol: self.rtol * factor,
            ..self.clone()
        }
    }
}

/// Mixed absolute/relative RMS norm of an error estimate.
pub fn error_norm(estimate: &[f64], y_prev: &[f64], y_next: &[f64], cfg: &ControllerConfig) -> f64 {
    debug_assert!(estimate.len() == y_prev.len() && y_prev.len() == y_next.len());
    if estimate.is_empty() {
        return 0.0;
    }
    let sum: f64 = estimate
        .iter()
        .zip(y_prev.iter().zip(y_next))
        .map(|(e, (a, b))| {
            let scale = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / estimate.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub accept: bool,
    pub h_next: f64,
}

/// PI update `h·clamp(safety·err^(−k_I)·(err_prev/err)^(k_P), min, max)`.
pub fn propose(err: f64, err_prev: f64, h: f64, cfg: &ControllerConfig, gains: Gains) -> Result<Proposal> {
    let e = err.max(ERR_FLOOR);
    let e_prev = err_prev.max(ERR_FLOOR);
    let factor = (cfg.safety * e.powf(-gains.integral) * (e_prev / e).powf(gains.proportional))
        .clamp(cfg.min_factor, cfg.max_factor);
    let h_next = (h * factor).min(cfg.h_max);
    if h_next < cfg.h_min {
        return Err(Error::Stiffness {
            t: f64::NAN,
            h: h_next,
            h_min: cfg.h_min,
        });
    }
    Ok(Proposal {
        accept: err <= 1.0,
        h_next,
    })
}

/// How a solve chooses its steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Fixed { h: f64, n_steps: usize },
    Adaptive { t_end: f64, controller: ControllerConfig },
}

impl Schedule {
    pub fn t_end(&self, t0: f64) -> f64 {
        match self {
            Schedule::Fixed { h, n_steps } => t0 + *n_steps as f64 * h,
            Schedule::Adaptive { t_end, .. } => *t_end,
        }
    }

    /// Fixed schedule with `n_steps` equal steps over `[t0, t_end]`.
    pub fn uniform(t0: f64, t_end: f64, n_steps: usize) -> Self {
        Schedule::Fixed {
            h: (t_end - t0) / n_steps as f64,
            n_steps,
        }
    }
}

/// The time grid a solve ran on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// `t_n = t0 + n·h` for `n = 0..=n_steps`.
    Uniform { t0: f64, h: f64, n_steps: usize },
    /// Accepted times `t_0 < t_1 < … < t_N`.
    Recorded { times: Vec<f64> },
}

impl Grid {
    pub fn n_steps(&self) -> usize {
        match self {
            Grid::Uniform { n_steps, .. } => *n_steps,
            Grid::Recorded { times } => times.len().saturating_sub(1),
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        match self {
            Grid::Uniform { t0, h, .. } => t0 + n as f64 * h,
            Grid::Recorded { times } => times[n],
        }
    }

    /// Step size used between `t_n` and `t_{n+1}`.
    pub fn step(&self, n: usize) -> f64 {
        match self {
            Grid::Uniform { h, .. } => *h,
            Grid::Recorded { times } => times[n + 1] - times[n],
        }
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        (0..self.n_steps()).map(|n| self.step(n)).collect()
    }
}

/// Accepted grid of a solve, the observation steps on it, and controller state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub grid: Grid,
    /// Step index `n` of each observation time, in observation order.
    pub observation_steps: Vec<usize>,
    pub rejected: usize,
    /// Error norm of every trial step, accepted or not, in order.
    pub error_log: Vec<f64>,
    /// Last accepted error norm (the controller's memory).
    pub last_error: f64,
}

impl StepRecord {
    /// Record for a fixed-step solve. Observation times must lie on the grid.
    pub fn uniform(t0: f64, h: f64, n_steps: usize, obs_times: &[f64]) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) || n_steps == 0 {
            return Err(Error::Config(format!(
                "fixed schedule needs h > 0 and at least one step (h = {h}, n = {n_steps})"
            )));
        }
        let tol = 1e-9 * (h * n_steps as f64).max(1.0);
        let observation_steps = obs_times
            .iter()
            .map(|&t| {
                let n = ((t - t0) / h).round();
                if n < 0.0 || n > n_steps as f64 || (t0 + n * h - t).abs() > tol {
                    Err(Error::Config(format!("observation time {t} is not on the step grid")))
                } else {
                    Ok(n as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        check_sorted(&observation_steps)?;
        Ok(StepRecord {
            grid: Grid::Uniform { t0, h, n_steps },
            observation_steps,
            rejected: 0,
            error_log: Vec::new(),
            last_error: 0.0,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,t,h\n");
        for n in 0..self.n_steps() {
            out.push_str(&format!("{n},{:e},{:e}\n", self.grid.time(n), self.grid.step(n)));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_sorted(steps: &[usize]) -> Result<()> {
    if steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("observation times must be sorted".into()));
    }
    Ok(())
}

/// Drives an adaptive solve: hands out trial steps and records accepted ones.
///
/// Trial steps are clipped so that every observation time and `t_end` is
/// hit exactly.
#[derive(Clone, Debug)]
pub struct AdaptiveStepper {
    cfg: ControllerConfig,
    gains: Gains,
    t: f64,
    h: f64,
    err_prev: f64,
    stops: Vec<(f64, bool)>,
    next_stop: usize,
    times: Vec<f64>,
    observation_steps: Vec<usize>,
    rejected: usize,
    error_log: Vec<f64>,
}

/// A trial step `t → t_next` of size `h = t_next − t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trial {
    pub t: f64,
    pub t_next: f64,
    pub h: f64,
}

impl AdaptiveStepper {
    pub fn new(cfg: &ControllerConfig, embedded_order: usize, t0: f64, t_end: f64, obs_times: &[f64]) -> Result<Self> {
        cfg.validate()?;
        if !(t_end > t0) {
            return Err(Error::Config(format!("t_end = {t_end} must exceed t0 = {t0}")));
        }
        if obs_times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("observation times must be sorted".into()));
        }
        let mut observation_steps = Vec::new();
        let mut stops: Vec<(f64, bool)> = Vec::new();
        for &t in obs_times {
            if t < t0 || t > t_end {
                return Err(Error::Config(format!("observation time {t} outside [{t0}, {t_end}]")));
            }
            if t == t0 {
                observation_steps.push(0);
            } else {
                stops.push((t, true));
            }
        }
        if stops.last().is_none_or(|(t, _)| *t < t_end) {
            stops.push((t_end, false));
        }
        Ok(AdaptiveStepper {
            cfg: cfg.clone(),
            gains: cfg.gains(embedded_order),
            t: t0,
            h: cfg.h_init,
            err_prev: 1.0,
            stops,
            next_stop: 0,
            times: vec![t0],
            observation_steps,
            rejected: 0,
            error_log: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.next_stop >= self.stops.len()
    }

    /// Observation step indices registered so far.
    pub fn observation_steps(&self) -> &[usize] {
        &self.observation_steps
    }

    /// Number of accepted steps so far.
    pub fn accepted(&self) -> usize {
        self.times.len() - 1
    }

    pub fn trial(&self) -> Trial {
        let (stop, _) = self.stops[self.next_stop];
        // never leave a sliver shorter than h_min before the next stop
        let t_next = if self.t + self.h >= stop - self.cfg.h_min { stop } else { self.t + self.h };
        Trial {
            t: self.t,
            t_next,
            h: t_next - self.t,
        }
    }

    /// Feeds the error norm of the current trial; returns whether it was accepted.
    pub fn report(&mut self, err: f64) -> Result<bool> {
        let trial = self.trial();
        self.error_log.push(err);
        let proposal = propose(err, self.err_prev, trial.h, &self.cfg, self.gains).map_err(|e| match e {
            Error::Stiffness { h, h_min, .. } => Error::Stiffness { t: self.t, h, h_min },
            other => other,
        })?;
        self.h = proposal.h_next;
        if !proposal.accept {
            self.rejected += 1;
            return Ok(false);
        }
        self.err_prev = err.max(ERR_FLOOR);
        self.t = trial.t_next;
        self.times.push(trial.t_next);
        let (stop, is_obs) = self.stops[self.next_stop];
        if trial.t_next == stop {
            if is_obs {
                self.observation_steps.push(self.times.len() - 1);
            }
            self.next_stop += 1;
        }
        Ok(true)
    }

    pub fn finish(self) -> StepRecord {
        StepRecord {
            grid: Grid::Recorded { times: self.times },
            observation_steps: self.observation_steps,
            rejected: self.rejected,
            error_log: self.error_log,
            last_error: self.err_prev,
        }
    }
}

/// Re-runs the controller on a recorded error sequence.
pub fn replay(
    cfg: &ControllerConfig,
    embedded_order: usize,
    t0: f64,
    t_end: f64,
    obs_times: &[f64],
    errors: &[f64],
) -> Result<StepRecord> {
    let mut stepper = AdaptiveStepper::new(cfg, embedded_order, t0, t_end, obs_times)?;
    for &err in errors {
        if stepper.is_done() {
            return Err(Error::Data("error sequence is longer than the solve".into()));
        }
        stepper.report(err)?;
    }
    Ok(stepper.finish())
}

/// One scheme being driven over a schedule by [`drive`].
pub(crate) trait Integrator {
    /// Computes a trial step `t → t_next` of size `h` from the current state
    /// and returns its error norm (`None` when no estimate is available).
    fn attempt(&mut self, t: f64, t_next: f64, h: f64) -> Result<Option<f64>>;

    /// Makes the last attempted step the current state.
    fn commit(&mut self) -> Result<()>;

    /// Called when the current state (step `n`) is observation `k`.
    fn observe(&mut self, k: usize, n: usize) -> Result<()>;
}

/// Runs `integrator` over `schedule` and returns the accepted grid.
///
/// In adaptive mode a trial that diverges counts as a rejection.
pub(crate) fn drive(
    schedule: &Schedule,
    embedded_order: Option<usize>,
    t0: f64,
    obs_times: &[f64],
    integrator: &mut dyn Integrator,
) -> Result<StepRecord> {
    match schedule {
        Schedule::Fixed { h, n_steps } => {
            let record = StepRecord::uniform(t0, *h, *n_steps, obs_times)?;
            let mut next_obs = 0;
            let mut observe = |n: usize, integrator: &mut dyn Integrator| -> Result<()> {
                while next_obs < record.observation_steps.len() && record.observation_steps[next_obs] == n {
                    integrator.observe(next_obs, n)?;
                    next_obs += 1;
                }
                Ok(())
            };
            observe(0, integrator)?;
            for n in 0..*n_steps {
                let (t, t_next) = (record.grid.time(n), record.grid.time(n + 1));
                integrator.attempt(t, t_next, record.grid.step(n)).map_err(|e| e.at_step(n))?;
                integrator.commit()?;
                observe(n + 1, integrator)?;
            }
            Ok(record)
        }
        Schedule::Adaptive { t_end, controller } => {
            let k_emb = embedded_order.ok_or_else(|| {
                Error::Config("adaptive stepping needs a tableau with embedded weights".into())
            })?;
            let mut stepper = AdaptiveStepper::new(controller, k_emb, t0, *t_end, obs_times)?;
            let mut seen = 0;
            while seen < stepper.observation_steps().len() {
                integrator.observe(seen, 0)?;
                seen += 1;
            }
            while !stepper.is_done() {
                let n = stepper.accepted();
                let trial = stepper.trial();
                let err = match integrator.attempt(trial.t, trial.t_next, trial.h) {
                    Ok(Some(err)) if err.is_finite() => err,
                    Ok(Some(_)) => f64::INFINITY,
                    Ok(None) => 0.0,
                    Err(Error::Divergence { .. }) => f64::INFINITY,
                    Err(e) => return Err(e.at_step(n)),
                };
                if stepper.report(err)? {
                    integrator.commit()?;
                    while seen < stepper.observation_steps().len() {
                        integrator.observe(seen, stepper.observation_steps()[seen])?;
                        seen += 1;
                    }
                }
            }
            Ok(stepper.finish())
        }
    }
}

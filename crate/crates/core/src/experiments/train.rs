//! Fitting an MLP vector field to a trajectory with AdamW.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{generate_coupled_oscillator, generate_white_dwarf, ingest_csv, Trajectory};
use super::optim::{adamw_update, AdamWConfig, OptimizerState};
use crate::baseline::Scheme;
use crate::engine::{compute_gradient, evaluate_loss, Engine, GradientReport, Problem};
use crate::error::{Error, Result};
use crate::field::{Mlp, Params};
use crate::loss::SquaredError;
use crate::reversible::Coupling;
use crate::rk::Method;
use crate::step_control::{ControllerConfig, Schedule};

/// Mean of squared errors over all `M·d` entries, and `∂L/∂ŷₙ` per time.
pub fn mse_loss(predicted: &Trajectory, target: &Trajectory) -> Result<(f64, Vec<Vec<f64>>)> {
    if predicted.times() != target.times() || predicted.dim() != target.dim() {
        return Err(Error::Config("predicted and target trajectories are on different grids".into()));
    }
    let count = (target.len() * target.dim()) as f64;
    let mut total = 0.0;
    let grads = predicted
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, y)| {
            p.iter()
                .zip(y)
                .map(|(a, b)| {
                    total += (a - b).powi(2);
                    2.0 * (a - b) / count
                })
                .collect()
        })
        .collect();
    Ok((total / count, grads))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    Reversible,
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stepping {
    /// `substeps` equal solver steps between consecutive samples.
    Fixed {
        #[serde(default = "one")]
        substeps: usize,
    },
    Adaptive { controller: ControllerConfig },
}

impl Default for Stepping {
    fn default() -> Self {
        Stepping::Fixed { substeps: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    WhiteDwarf {
        #[serde(default = "white_dwarf_c")]
        c: f64,
        #[serde(default = "white_dwarf_r_end")]
        r_end: f64,
        #[serde(default = "white_dwarf_points")]
        n_points: usize,
    },
    /// Synthetic coupled-spring series, a stand-in for measured data.
    CoupledOscillator { t_end: f64, n_points: usize },
    Csv {
        path: PathBuf,
        #[serde(default)]
        t_range: Option<[f64; 2]>,
        n_points: usize,
        #[serde(default)]
        normalize: bool,
    },
}

fn one() -> usize {
    1
}
fn white_dwarf_c() -> f64 {
    0.001
}
fn white_dwarf_r_end() -> f64 {
    5.0
}
fn white_dwarf_points() -> usize {
    1001
}
fn default_engine() -> Engine {
    Engine::Reversible
}
fn default_lambda() -> f64 {
    Coupling::DEFAULT
}
fn default_hidden() -> usize {
    10
}

impl DataSource {
    /// Loads the data; relative CSV paths are resolved against `base_dir`.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<Trajectory> {
        match self {
            DataSource::WhiteDwarf { c, r_end, n_points } => generate_white_dwarf(*c, *r_end, *n_points),
            DataSource::CoupledOscillator { t_end, n_points } => generate_coupled_oscillator(*t_end, *n_points),
            DataSource::Csv {
                path,
                t_range,
                n_points,
                normalize,
            } => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Ok(ingest_csv(&path, t_range.map(|[a, b]| (a, b)), *n_points, *normalize)?.trajectory)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub solver: Method,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default)]
    pub scheme: SchemeKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub stepping: Stepping,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    /// Number of optimizer steps.
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub data: DataSource,
}

impl TrainConfig {
    /// The white dwarf setup: RK4, reversible, λ = 0.99, 1000 steps over `[0, 5]`.
    pub fn white_dwarf() -> Self {
        TrainConfig {
            solver: Method::Rk4,
            engine: Engine::Reversible,
            scheme: SchemeKind::Reversible,
            lambda: Coupling::DEFAULT,
            stepping: Stepping::default(),
            optimizer: AdamWConfig::default(),
            steps: 1000,
            seed: 0,
            hidden: 10,
            data: DataSource::WhiteDwarf {
                c: white_dwarf_c(),
                r_end: white_dwarf_r_end(),
                n_points: white_dwarf_points(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        let scheme = self.scheme()?;
        if self.engine == Engine::Reversible && scheme == Scheme::Plain {
            return Err(Error::Config("the reversible engine needs the reversible scheme".into()));
        }
        if let Engine::Checkpointed { c } = self.engine {
            if c < 2 {
                return Err(Error::Config(format!("checkpoint budget must be at least 2, got {c}")));
            }
        }
        match &self.stepping {
            Stepping::Fixed { substeps: 0 } => Err(Error::Config("substeps must be at least 1".into())),
            Stepping::Fixed { .. } => Ok(()),
            Stepping::Adaptive { controller } => {
                if self.solver.tableau().embedded_weights().is_none() {
                    return Err(Error::Config(format!(
                        "adaptive stepping needs an embedded method, {} has none",
                        self.solver
                    )));
                }
                controller.validate()
            }
        }
    }

    pub fn scheme(&self) -> Result<Scheme> {
        match self.scheme {
            SchemeKind::Plain => Ok(Scheme::Plain),
            SchemeKind::Reversible => Scheme::reversible(self.lambda),
        }
    }

    /// Step schedule for `data`; `refine` halves fixed steps or tightens
    /// tolerances that many times.
    fn schedule(&self, data: &Trajectory, refine: u32) -> Schedule {
        let t0 = data.times()[0];
        let t_end = *data.times().last().unwrap();
        let factor = 2usize.pow(refine);
        match &self.stepping {
            Stepping::Fixed { substeps } => Schedule::uniform(t0, t_end, (data.len() - 1) * substeps * factor),
            Stepping::Adaptive { controller } => Schedule::Adaptive {
                t_end,
                controller: controller.tightened(1.0 / factor as f64),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Succeeded after refining the step schedule once.
    Retried,
    /// Failed twice; no update was made.
    Skipped,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    /// Loss before the update (null when skipped).
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub wall_ms: f64,
    pub stored_state_peak: usize,
    pub step_evals: usize,
    pub vjp_evals: usize,
    pub n_steps_solver: usize,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub log: Vec<LogRecord>,
    /// Loss of the final parameters.
    pub final_loss: f64,
}

pub fn train(config: &TrainConfig, data: &Trajectory) -> Result<TrainOutcome> {
    train_with(config, data, &mut |_| Ok(()))
}

fn attempt(engine: Engine, p: &Problem<'_>) -> Result<GradientReport> {
    let report = compute_gradient(engine, p)?;
    let finite = report.loss.is_finite() && report.theta_bar.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::Domain("non-finite loss or gradient".into()));
    }
    Ok(report)
}

/// Trains and hands every log record to `on_record` as soon as it exists.
///
/// A numerical failure is retried once with a refined schedule; a second
/// failure skips the iteration.
pub fn train_with(
    config: &TrainConfig,
    data: &Trajectory,
    on_record: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let d = data.dim();
    let mut model = Mlp::seeded(d, config.hidden, config.seed);
    let tab = config.solver.tableau();
    let scheme = config.scheme()?;
    let loss = SquaredError::mse(data.values().to_vec());
    let y0 = data.values()[0].clone();
    let schedules = [config.schedule(data, 0), config.schedule(data, 1)];
    let mut state = OptimizerState::new(model.parameters().len());
    let mut log = Vec::with_capacity(config.steps);

    for iter in 0..config.steps {
        let start = Instant::now();
        let problem = |schedule| Problem {
            field: &model,
            tableau: &tab,
            scheme,
            t0: data.times()[0],
            y0: &y0,
            schedule,
            obs_times: data.times(),
            loss: &loss,
        };
        let outcome = match attempt(config.engine, &problem(&schedules[0])) {
            Ok(r) => Some((r, Status::Ok)),
            Err(e) if e.is_numerical() => match attempt(config.engine, &problem(&schedules[1])) {
                Ok(r) => Some((r, Status::Retried)),
                Err(e) if e.is_numerical() => None,
                Err(e) => return Err(e),
            },
            Err(e) => return Err(e),
        };
        let record = match outcome {
            Some((report, status)) => {
                let mut params = model.parameters().values().to_vec();
                adamw_update(&mut params, &report.theta_bar, &mut state, &config.optimizer)?;
                model.set_params(&params)?;
                LogRecord {
                    iter,
                    loss: Some(report.loss),
                    grad_norm: Some(report.theta_bar.iter().map(|g| g * g).sum::<f64>().sqrt()),
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    stored_state_peak: report.counters.stored_state_peak,
                    step_evals: report.counters.step_evals(),
                    vjp_evals: report.counters.vjp_evals,
                    n_steps_solver: report.n_steps,
                    status,
                }
            }
            None => LogRecord {
                iter,
                loss: None,
                grad_norm: None,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                stored_state_peak: 0,
                step_evals: 0,
                vjp_evals: 0,
                n_steps_solver: 0,
                status: Status::Skipped,
            },
        };
        on_record(&record)?;
        log.push(record);
    }

    let final_problem = Problem {
        field: &model,
        tableau: &tab,
        scheme,
        t0: data.times()[0],
        y0: &y0,
        schedule: &schedules[0],
        obs_times: data.times(),
        loss: &loss,
    };
    let final_loss = match evaluate_loss(&final_problem) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(TrainOutcome {
        params: model.parameters().clone(),
        log,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(engine: Engine, steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            engine,
            hidden: 4,
            data: DataSource::WhiteDwarf {
                c: 0.001,
                r_end: 1.0,
                n_points: 21,
            },
            ..TrainConfig::white_dwarf()
        }
    }

    #[test]
    fn mse_definition() {
        let t = Trajectory::new(vec![0.0], vec![vec![0.0]]).unwrap();
        let p = Trajectory::new(vec![0.0], vec![vec![1.0]]).unwrap();
        assert_eq!(mse_loss(&p, &t).unwrap(), (1.0, vec![vec![2.0]]));
        assert_eq!(mse_loss(&t, &t).unwrap(), (0.0, vec![vec![0.0]]));
        let shifted = Trajectory::new(vec![1.0], vec![vec![1.0]]).unwrap();
        assert!(matches!(mse_loss(&shifted, &t), Err(Error::Config(_))));
    }

    #[test]
    fn mse_on_random_pair() {
        let t = Trajectory::new(vec![0.0, 1.0], vec![vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let p = Trajectory::new(vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![2.5, 0.0]]).unwrap();
        // squared errors 0.25, 4, 0.25, 0.0625 over 4 entries
        let (l, g) = mse_loss(&p, &t).unwrap();
        approx::assert_relative_eq!(l, 4.5625 / 4.0, max_relative = 1e-15);
        assert_eq!(g[0], vec![-0.25, 1.0]);
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let cfg = tiny(Engine::Reversible, 0);
        let data = cfg.data.load(None).unwrap();
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.params.values(), Mlp::seeded(2, 4, 0).parameters().values());
        assert!(out.log.is_empty());
    }

    #[test]
    fn engines_give_matching_loss_curves() {
        let data = tiny(Engine::Reversible, 5).data.load(None).unwrap();
        let rev = train(&tiny(Engine::Reversible, 5), &data).unwrap();
        let tape = train(&tiny(Engine::FullTape, 5), &data).unwrap();
        for (a, b) in rev.log.iter().zip(&tape.log) {
            let (a, b) = (a.loss.unwrap(), b.loss.unwrap());
            assert!((a - b).abs() <= 1e-6 * b.abs());
        }
        assert!(rev.log.last().unwrap().loss < rev.log[0].loss);
    }

    #[test]
    fn config_json_rejects_unknown_keys_and_bad_combinations() {
        let ok = r#"{"solver":"rk4","steps":3,"data":{"kind":"white_dwarf"}}"#;
        let cfg = TrainConfig::from_json(ok).unwrap();
        assert_eq!(cfg.engine, Engine::Reversible);
        assert_eq!(cfg.lambda, 0.99);
        assert!(TrainConfig::from_json(r#"{"solver":"rk4","steps":3,"data":{"kind":"white_dwarf"},"lr":1}"#).is_err());
        let plain = r#"{"solver":"rk4","steps":3,"scheme":"plain","data":{"kind":"white_dwarf"}}"#;
        assert!(matches!(TrainConfig::from_json(plain), Err(Error::Config(_))));
        let adaptive = r#"{"solver":"rk4","steps":3,"stepping":{"kind":"adaptive","controller":{}},"data":{"kind":"white_dwarf"}}"#;
        assert!(matches!(TrainConfig::from_json(adaptive), Err(Error::Config(_))));
    }
}

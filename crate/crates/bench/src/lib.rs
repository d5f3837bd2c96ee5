//! Fixtures shared by the benchmarks.

use revode_core::baseline::Scheme;
use revode_core::{Method, Mlp, Problem, Schedule, SquaredError};

/// An MLP gradient problem on `[0, 1]` with a terminal squared-error loss.
pub struct Fixture {
    pub field: Mlp,
    pub tableau: revode_core::ButcherTableau,
    pub schedule: Schedule,
    pub obs: [f64; 1],
    pub loss: SquaredError,
    pub y0: Vec<f64>,
}

impl Fixture {
    pub fn new(method: Method, n_steps: usize) -> Self {
        Fixture {
            field: Mlp::seeded(2, 10, 0),
            tableau: method.tableau(),
            schedule: Schedule::uniform(0.0, 1.0, n_steps),
            obs: [1.0],
            loss: SquaredError::mse(vec![vec![0.0, 0.0]]),
            y0: vec![0.5, -0.5],
        }
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            field: &self.field,
            tableau: &self.tableau,
            scheme: Scheme::reversible(0.99).expect("valid coupling"),
            t0: 0.0,
            y0: &self.y0,
            schedule: &self.schedule,
            obs_times: &self.obs,
            loss: &self.loss,
        }
    }
}

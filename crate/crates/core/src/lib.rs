//! Differentiable ODE solving with algebraically reversible Runge-Kutta schemes.
//!
//! The crate provides explicit Runge-Kutta tableaux, a coupled reversible
//! scheme whose backward pass reconstructs states exactly, three gradient
//! engines (reversible, full tape, binomial checkpointing), linear stability
//! analysis of the coupled scheme, and a small training pipeline.

pub mod baseline;
pub mod counters;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod field;
pub mod loss;
pub mod reversible;
pub mod rk;
pub mod stability;
pub mod step_control;

pub use counters::Counters;
pub use engine::{compute_gradient, Engine, GradientReport, Problem};
pub use error::{Error, Result};
pub use field::{FieldSpec, LinearField, Mlp, Params, VectorField, ZeroField};
pub use loss::{ObservationLoss, SquaredError, WeightedSum};
pub use reversible::{Coupling, ReversibleState};
pub use rk::{ButcherTableau, Method};
pub use step_control::{ControllerConfig, Schedule, StepRecord};

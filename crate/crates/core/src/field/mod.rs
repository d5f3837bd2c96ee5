//! Vector fields `f(t, y; θ)` with exact evaluation and vector-Jacobian products.
//!
//! Every solver and gradient engine in the crate is written against the
//! [`VectorField`] trait. A field reports its state dimension, exposes its flat
//! parameter vector, evaluates the derivative, and pulls a cotangent back to
//! both the state and the parameters.

mod analytic;
mod mlp;
mod params;

pub use analytic::{CoupledOscillatorField, DoublePendulumField, WhiteDwarfField};
pub use mlp::Mlp;
pub use params::{Params, TensorSpec};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Dynamics `dy/dt = f(t, y; θ)` on `ℝ^d`.
pub trait VectorField: Send + Sync {
    /// State dimension `d`.
    fn dim(&self) -> usize;

    /// Flat parameter vector θ (empty for parameter-free fields).
    fn params(&self) -> &[f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Evaluates `f(t, y; θ)`.
    fn evaluate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>>;

    /// Returns `(v·∂f/∂y, v·∂f/∂θ)` at `(t, y; θ)`.
    fn vjp(&self, t: f64, y: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

pub(crate) fn check_input(dim: usize, t: f64, y: &[f64]) -> Result<()> {
    if y.len() != dim {
        return Err(Error::Config(format!(
            "state has dimension {}, field expects {dim}",
            y.len()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("time {t} is not finite")));
    }
    ensure_finite("y", y)
}

pub(crate) fn check_cotangent(dim: usize, v: &[f64]) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Config(format!(
            "cotangent has dimension {}, field expects {dim}",
            v.len()
        )));
    }
    ensure_finite("v", v)
}

/// The field `f ≡ 0`.
#[derive(Clone, Debug)]
pub struct ZeroField {
    dim: usize,
}

impl ZeroField {
    pub fn new(dim: usize) -> Self {
        ZeroField { dim }
    }
}

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn evaluate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim, t, y)?;
        Ok(vec![0.0; self.dim])
    }

    fn vjp(&self, t: f64, y: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_input(self.dim, t, y)?;
        check_cotangent(self.dim, v)?;
        Ok((vec![0.0; self.dim], Vec::new()))
    }
}

/// The linear test problem `dy/dt = α y`, with α as the single parameter.
#[derive(Clone, Debug)]
pub struct LinearField {
    alpha: [f64; 1],
    dim: usize,
}

impl LinearField {
    pub fn new(alpha: f64, dim: usize) -> Self {
        LinearField {
            alpha: [alpha],
            dim,
        }
    }

    pub fn scalar(alpha: f64) -> Self {
        Self::new(alpha, 1)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha[0]
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.alpha
    }

    fn evaluate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim, t, y)?;
        Ok(y.iter().map(|yi| self.alpha[0] * yi).collect())
    }

    fn vjp(&self, t: f64, y: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_input(self.dim, t, y)?;
        check_cotangent(self.dim, v)?;
        let dy = v.iter().map(|vi| self.alpha[0] * vi).collect();
        let dalpha = v.iter().zip(y).map(|(vi, yi)| vi * yi).sum();
        Ok((dy, vec![dalpha]))
    }
}

/// Serializable description of a field, used by experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero {
        dim: usize,
    },
    Linear {
        alpha: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    WhiteDwarf {
        c: f64,
    },
    Mlp {
        dim: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
    DoublePendulum,
    CoupledOscillator,
}

fn one() -> usize {
    1
}

fn default_hidden() -> usize {
    10
}

impl FieldSpec {
    pub fn dim(&self) -> usize {
        match self {
            FieldSpec::Zero { dim } | FieldSpec::Linear { dim, .. } | FieldSpec::Mlp { dim, .. } => *dim,
            FieldSpec::WhiteDwarf { .. } => 2,
            FieldSpec::DoublePendulum | FieldSpec::CoupledOscillator => 4,
        }
    }

    /// Builds the field; `seed` drives MLP initialization and is ignored otherwise.
    pub fn build(&self, seed: u64) -> Result<Box<dyn VectorField>> {
        Ok(match *self {
            FieldSpec::Zero { dim } => Box::new(ZeroField::new(dim)),
            FieldSpec::Linear { alpha, dim } => Box::new(LinearField::new(alpha, dim)),
            FieldSpec::WhiteDwarf { c } => Box::new(WhiteDwarfField::new(c)?),
            FieldSpec::Mlp { dim, hidden } => Box::new(Mlp::seeded(dim, hidden, seed)),
            FieldSpec::DoublePendulum => Box::new(DoublePendulumField::default()),
            FieldSpec::CoupledOscillator => Box::new(CoupledOscillatorField::default()),
        })
    }

    /// Builds the field with the flat parameter vector `theta`.
    pub fn build_with_params(&self, theta: &[f64]) -> Result<Box<dyn VectorField>> {
        match *self {
            FieldSpec::Mlp { dim, hidden } => Ok(Box::new(Mlp::new(
                dim,
                hidden,
                Params::new(Mlp::layout(dim, hidden), theta.to_vec())?,
            )?)),
            FieldSpec::Linear { dim, .. } => match theta {
                [alpha] => Ok(Box::new(LinearField::new(*alpha, dim))),
                _ => Err(Error::Config(format!("linear field takes 1 parameter, got {}", theta.len()))),
            },
            _ if theta.is_empty() => self.build(0),
            _ => Err(Error::Config(format!("field takes no parameters, got {}", theta.len()))),
        }
    }
}

//! Losses that decompose over observation times, `L = Σₖ Lₖ(y(tₖ))`.

use crate::error::{ensure_finite, Error, Result};

/// A scalar loss fed one observed state at a time.
///
/// `k` indexes the observation times passed to the solver.
pub trait ObservationLoss {
    fn value(&self, k: usize, y: &[f64]) -> Result<f64>;

    /// `∂Lₖ/∂y` at the observed state.
    fn gradient(&self, k: usize, y: &[f64]) -> Result<Vec<f64>>;
}

/// `Lₖ = w·y` at every observation.
#[derive(Clone, Debug)]
pub struct WeightedSum {
    pub weights: Vec<f64>,
}

impl WeightedSum {
    pub fn new(weights: Vec<f64>) -> Self {
        WeightedSum { weights }
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "loss weights have dimension {}, state has {}",
                self.weights.len(),
                y.len()
            )));
        }
        ensure_finite("y", y)
    }
}

impl ObservationLoss for WeightedSum {
    fn value(&self, _k: usize, y: &[f64]) -> Result<f64> {
        self.check(y)?;
        Ok(self.weights.iter().zip(y).map(|(w, v)| w * v).sum())
    }

    fn gradient(&self, _k: usize, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        Ok(self.weights.clone())
    }
}

/// `Lₖ = scale·‖y − targetₖ‖²`; with `scale = 1/(M·d)` the total is the MSE.
#[derive(Clone, Debug)]
pub struct SquaredError {
    targets: Vec<Vec<f64>>,
    scale: f64,
}

impl SquaredError {
    pub fn new(targets: Vec<Vec<f64>>, scale: f64) -> Self {
        SquaredError { targets, scale }
    }

    /// Mean over all `M·d` entries.
    pub fn mse(targets: Vec<Vec<f64>>) -> Self {
        let count: usize = targets.iter().map(Vec::len).sum();
        let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        SquaredError { targets, scale }
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    fn target(&self, k: usize, y: &[f64]) -> Result<&[f64]> {
        let target = self
            .targets
            .get(k)
            .ok_or_else(|| Error::Config(format!("no target for observation {k}")))?;
        if target.len() != y.len() {
            return Err(Error::Config(format!(
                "target {k} has dimension {}, state has {}",
                target.len(),
                y.len()
            )));
        }
        ensure_finite("y", y)?;
        Ok(target)
    }
}

impl ObservationLoss for SquaredError {
    fn value(&self, k: usize, y: &[f64]) -> Result<f64> {
        let target = self.target(k, y)?;
        Ok(self.scale * y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
    }

    fn gradient(&self, k: usize, y: &[f64]) -> Result<Vec<f64>> {
        let target = self.target(k, y)?;
        Ok(y.iter().zip(target).map(|(a, b)| 2.0 * self.scale * (a - b)).collect())
    }
}

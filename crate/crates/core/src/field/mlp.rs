use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_cotangent, check_input, Params, TensorSpec, VectorField};
use crate::error::{Error, Result};

/// Two-layer tanh network `W₂·tanh(W₁·[t; y] + b₁) + b₂`.
///
/// Time enters as an extra input coordinate, so `W₁` is `hidden × (d + 1)`.
/// Weights are stored row-major in the order `w1, b1, w2, b2`.
#[derive(Clone, Debug)]
pub struct Mlp {
    dim: usize,
    hidden: usize,
    params: Params,
}

impl Mlp {
    pub fn layout(dim: usize, hidden: usize) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("w1", &[hidden, dim + 1]),
            TensorSpec::new("b1", &[hidden]),
            TensorSpec::new("w2", &[dim, hidden]),
            TensorSpec::new("b2", &[dim]),
        ]
    }

    pub fn new(dim: usize, hidden: usize, params: Params) -> Result<Self> {
        if params.layout() != Self::layout(dim, hidden).as_slice() {
            return Err(Error::Config(format!(
                "parameter layout does not match an MLP with dim {dim}, hidden {hidden}"
            )));
        }
        Ok(Mlp { dim, hidden, params })
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Mlp {
            dim,
            hidden,
            params: Params::zeros(Self::layout(dim, hidden)),
        }
    }

    /// Uniform fan-in initialization: every entry of a layer is drawn from
    /// `[-1/√fan_in, 1/√fan_in]`.
    pub fn init<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(dim, hidden);
        let bound1 = 1.0 / ((dim + 1) as f64).sqrt();
        let bound2 = if hidden > 0 { 1.0 / (hidden as f64).sqrt() } else { 0.0 };
        for (name, bound) in [("w1", bound1), ("b1", bound1), ("w2", bound2), ("b2", bound2)] {
            for v in mlp.params.tensor_mut(name).expect("layout tensor") {
                *v = if bound > 0.0 {
                    rng.random_range(-bound..=bound)
                } else {
                    0.0
                };
            }
        }
        mlp
    }

    pub fn seeded(dim: usize, hidden: usize, seed: u64) -> Self {
        Self::init(dim, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn parameters(&self) -> &Params {
        &self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.values_mut().copy_from_slice(values);
        Ok(())
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let p = self.params.values();
        let n1 = self.hidden * (self.dim + 1);
        let (w1, rest) = p.split_at(n1);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.dim * self.hidden);
        (w1, b1, w2, b2)
    }

    fn hidden_activations(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        let cols = self.dim + 1;
        (0..self.hidden)
            .map(|i| {
                let row = &w1[i * cols..(i + 1) * cols];
                let pre = b1[i] + row[0] * t + row[1..].iter().zip(y).map(|(w, x)| w * x).sum::<f64>();
                pre.tanh()
            })
            .collect()
    }
}

impl VectorField for Mlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        self.params.values()
    }

    fn evaluate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim, t, y)?;
        let act = self.hidden_activations(t, y);
        let (_, _, w2, b2) = self.split();
        Ok((0..self.dim)
            .map(|j| {
                let row = &w2[j * self.hidden..(j + 1) * self.hidden];
                b2[j] + row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect())
    }

    fn vjp(&self, t: f64, y: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_input(self.dim, t, y)?;
        check_cotangent(self.dim, v)?;
        let act = self.hidden_activations(t, y);
        let (w1, _, w2, _) = self.split();
        let (d, hd, cols) = (self.dim, self.hidden, self.dim + 1);

        let mut grad = vec![0.0; self.params.len()];
        let (g_w1, rest) = grad.split_at_mut(hd * cols);
        let (g_b1, rest) = rest.split_at_mut(hd);
        let (g_w2, g_b2) = rest.split_at_mut(d * hd);

        g_b2.copy_from_slice(v);
        // pre-activation cotangent: (W₂ᵀ v) ⊙ (1 − tanh²)
        let mut g_pre = vec![0.0; hd];
        for j in 0..d {
            for i in 0..hd {
                g_w2[j * hd + i] = v[j] * act[i];
                g_pre[i] += w2[j * hd + i] * v[j];
            }
        }
        for (g, a) in g_pre.iter_mut().zip(&act) {
            *g *= 1.0 - a * a;
        }
        g_b1.copy_from_slice(&g_pre);

        let mut g_y = vec![0.0; d];
        for i in 0..hd {
            let row = &mut g_w1[i * cols..(i + 1) * cols];
            row[0] = g_pre[i] * t;
            for k in 0..d {
                row[k + 1] = g_pre[i] * y[k];
                g_y[k] += w1[i * cols + k + 1] * g_pre[i];
            }
        }
        Ok((g_y, grad))
    }
}

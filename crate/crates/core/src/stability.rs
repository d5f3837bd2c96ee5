//! Linear stability of the reversible scheme on `dy/dt = αy`.
//!
//! On the scalar test problem one step of the coupled scheme is a 2×2 linear
//! map `T` on `(y, z)` with `det T = λ` and `trace T = Γ`, where
//!
//! ```text
//! Γ = 1 + λ − (1−λ)·R(−hα) − R(−hα)·R(hα)
//! ```
//!
//! and `R` is the transfer function of the base tableau. The scheme is stable
//! iff `|Γ| < 1 + λ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::LinearField;
use crate::reversible::{forward_step, Coupling, ReversibleState};
use crate::rk::{transfer_function, ButcherTableau};

pub type Matrix2 = [[f64; 2]; 2];

pub fn gamma(tab: &ButcherTableau, h_alpha: f64, lambda: f64) -> f64 {
    let r_plus = transfer_function(tab, h_alpha);
    let r_minus = transfer_function(tab, -h_alpha);
    1.0 + lambda - (1.0 - lambda) * r_minus - r_minus * r_plus
}

/// One step as a matrix acting on `(yₙ, zₙ)`.
pub fn amplification_matrix(tab: &ButcherTableau, h_alpha: f64, lambda: f64) -> Matrix2 {
    let r_plus = transfer_function(tab, h_alpha);
    let r_minus = transfer_function(tab, -h_alpha);
    [
        [lambda, 1.0 - lambda + r_plus],
        [-lambda * r_minus, 1.0 - (1.0 - lambda) * r_minus - r_minus * r_plus],
    ]
}

pub fn determinant(m: &Matrix2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn eigenvalues(m: &Matrix2) -> [Complex64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = determinant(m);
    let disc = Complex64::new(tr * tr - 4.0 * det, 0.0).sqrt();
    let half = Complex64::new(tr / 2.0, 0.0);
    [half + disc / 2.0, half - disc / 2.0]
}

pub fn spectral_radius(m: &Matrix2) -> f64 {
    let [a, b] = eigenvalues(m);
    a.norm().max(b.norm())
}

/// Outcome of simulating the test problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Decays,
    BlowsUp,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub gamma: f64,
    /// `|Γ| < 1 + λ`
    pub criterion: bool,
    /// Eigenvalues of `T` as `[re, im]` pairs.
    pub eigenvalues: [[f64; 2]; 2],
    pub spectral_radius: f64,
    pub empirical: Option<Decay>,
    /// Set at `λ = 1`, where `det T = 1` puts every verdict on the boundary.
    pub marginal: bool,
}

impl StabilityVerdict {
    /// Whether the eigenvalue check is conclusive (ρ outside the boundary band).
    pub fn off_boundary(&self, band: f64) -> bool {
        (self.spectral_radius - 1.0).abs() > band
    }
}

pub fn is_stable(tab: &ButcherTableau, h_alpha: f64, coupling: Coupling) -> StabilityVerdict {
    let lambda = coupling.value();
    let g = gamma(tab, h_alpha, lambda);
    let m = amplification_matrix(tab, h_alpha, lambda);
    let eig = eigenvalues(&m);
    StabilityVerdict {
        gamma: g,
        criterion: g.abs() < 1.0 + lambda,
        eigenvalues: [[eig[0].re, eig[0].im], [eig[1].re, eig[1].im]],
        spectral_radius: spectral_radius(&m),
        empirical: None,
        marginal: lambda == 1.0,
    }
}

/// Verdict with the long-run simulation attached.
pub fn is_stable_empirical(tab: &ButcherTableau, h_alpha: f64, coupling: Coupling, n_steps: usize) -> Result<StabilityVerdict> {
    let mut v = is_stable(tab, h_alpha, coupling);
    v.empirical = Some(empirical_decay(tab, h_alpha, coupling, n_steps)?);
    Ok(v)
}

pub const DEFAULT_DECAY_STEPS: usize = 10_000;

/// Runs the reversible scheme on the scalar test problem with unit step and
/// `α = hα` from `y₀ = z₀ = 1`.
pub fn empirical_decay(tab: &ButcherTableau, h_alpha: f64, coupling: Coupling, n_steps: usize) -> Result<Decay> {
    let field = LinearField::scalar(h_alpha);
    let mut s = ReversibleState::initial(0.0, &[1.0]);
    let norm0 = 2f64.sqrt();
    for _ in 0..n_steps {
        s = match forward_step(&field, tab, coupling, &s, 1.0) {
            Ok(next) => next,
            Err(e) if e.is_numerical() => return Ok(Decay::BlowsUp),
            Err(e) => return Err(e),
        };
        let norm = s.y[0].hypot(s.z[0]);
        if norm < 1e-8 * norm0 {
            return Ok(Decay::Decays);
        }
        if !(norm <= 1e8 * norm0) {
            return Ok(Decay::BlowsUp);
        }
    }
    Ok(Decay::Inconclusive)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_axpy(acc: &mut Vec<f64>, scale: f64, p: &[f64]) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    for (a, x) in acc.iter_mut().zip(p) {
        *a += scale * x;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouthHurwitz {
    /// `Q(w) = q₀ + q₁w + q₂w²`
    pub coefficients: [f64; 3],
    pub stable: bool,
}

/// Maps `P(e) = e² − Γe + λ` to `Q(w) = (1−w)²·P((1+w)/(1−w))`, which sends
/// the unit disc to the left half-plane; a quadratic is Hurwitz iff its
/// coefficients are all positive.
pub fn routh_hurwitz(gamma: f64, lambda: f64) -> RouthHurwitz {
    let one_plus = [1.0, 1.0];
    let one_minus = [1.0, -1.0];
    let mut q = Vec::new();
    poly_axpy(&mut q, 1.0, &poly_mul(&one_plus, &one_plus));
    poly_axpy(&mut q, -gamma, &poly_mul(&one_plus, &one_minus));
    poly_axpy(&mut q, lambda, &poly_mul(&one_minus, &one_minus));
    let coefficients = [q[0], q[1], q[2]];
    RouthHurwitz {
        stable: coefficients.iter().all(|c| *c > 0.0),
        coefficients,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub h_alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub lambda: f64,
    /// Most negative `hα` on the grid with a stable verdict.
    pub boundary: Option<f64>,
    pub marginal: bool,
}

pub fn verdict_grid(tab: &ButcherTableau, lambdas: &[Coupling], h_alphas: &[f64]) -> Vec<GridRow> {
    let mut rows = Vec::with_capacity(lambdas.len() * h_alphas.len());
    for &c in lambdas {
        for &ha in h_alphas {
            let v = is_stable(tab, ha, c);
            rows.push(GridRow {
                lambda: c.value(),
                h_alpha: ha,
                gamma: v.gamma,
                rho: v.spectral_radius,
                stable: v.criterion,
            });
        }
    }
    rows
}

pub fn region_scan(tab: &ButcherTableau, lambdas: &[Coupling], h_alphas: &[f64]) -> Vec<BoundaryRow> {
    lambdas
        .iter()
        .map(|&c| BoundaryRow {
            lambda: c.value(),
            boundary: h_alphas
                .iter()
                .copied()
                .filter(|&ha| is_stable(tab, ha, c).criterion)
                .fold(None, |acc: Option<f64>, ha| Some(acc.map_or(ha, |a| a.min(ha)))),
            marginal: c.value() == 1.0,
        })
        .collect()
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("lambda,h_alpha,gamma,rho,stable\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.lambda, r.h_alpha, r.gamma, r.rho, r.stable));
    }
    out
}

pub fn boundary_csv(rows: &[BoundaryRow]) -> String {
    let mut out = String::from("lambda,boundary_h_alpha,marginal\n");
    for r in rows {
        let b = r.boundary.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.lambda, b, r.marginal));
    }
    out
}

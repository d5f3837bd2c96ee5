//! Parameter-free physical fields used for data generation and solver tests.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{check_cotangent, check_input, VectorField};
use crate::error::{Error, Result};

/// Chandrasekhar's white dwarf equation as a first-order system in `(φ, φ′)`:
///
/// ```text
/// u′ = w
/// w′ = −(2/r)·w − max(u² − C, 0)^{3/2}
/// ```
///
/// At `r = 0` the `2w/r` term is replaced by its series limit, which gives
/// `w′ = −(u² − C)^{3/2} / 3`.
#[derive(Clone, Debug)]
pub struct WhiteDwarfField {
    c: f64,
}

impl WhiteDwarfField {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Config(format!(
                "white dwarf constant must lie in (0, 1), got {c}"
            )));
        }
        Ok(WhiteDwarfField { c })
    }

    pub fn constant(&self) -> f64 {
        self.c
    }

    fn excess(&self, u: f64) -> f64 {
        (u * u - self.c).max(0.0)
    }
}

impl VectorField for WhiteDwarfField {
    fn dim(&self) -> usize {
        2
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn evaluate(&self, r: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_input(2, r, y)?;
        let (u, w) = (y[0], y[1]);
        let source = self.excess(u).powf(1.5);
        let dw = if r == 0.0 {
            -source / 3.0
        } else {
            -2.0 * w / r - source
        };
        Ok(vec![w, dw])
    }

    fn vjp(&self, r: f64, y: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_input(2, r, y)?;
        check_cotangent(2, v)?;
        let u = y[0];
        // d/du (u² − C)^{3/2} = 3u·(u² − C)^{1/2}, zero on the clamped branch
        let dsource = 3.0 * u * self.excess(u).sqrt();
        let (du, dw) = if r == 0.0 {
            (-dsource / 3.0, 0.0)
        } else {
            (-dsource, -2.0 / r)
        };
        Ok((vec![v[1] * du, v[0] + v[1] * dw], Vec::new()))
    }
}

/// Two linearly coupled damped springs, state `(x₁, x₂, v₁, v₂)`.
#[derive(Clone, Debug)]
pub struct CoupledOscillatorField {
    pub stiffness: f64,
    pub coupling: f64,
    pub damping: f64,
}

impl Default for CoupledOscillatorField {
    fn default() -> Self {
        CoupledOscillatorField {
            stiffness: 4.0,
            coupling: 1.5,
            damping: 0.1,
        }
    }
}

impl CoupledOscillatorField {
    fn matrix(&self) -> [[f64; 4]; 4] {
        let (k, kc, c) = (self.stiffness, self.coupling, self.damping);
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-k - kc, kc, -c, 0.0],
            [kc, -k - kc, 0.0, -c],
        ]
    }
}

impl VectorField for CoupledOscillatorField {
    fn dim(&self) -> usize {
        4
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn evaluate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_input(4, t, y)?;
        Ok(self
            .matrix()
            .iter()
            .map(|row| row.iter().zip(y).map(|(a, x)| a * x).sum())
            .collect())
    }

    fn vjp(&self, t: f64, y: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_input(4, t, y)?;
        check_cotangent(4, v)?;
        let m = self.matrix();
        let g = (0..4).map(|j| (0..4).map(|i| v[i] * m[i][j]).sum()).collect();
        Ok((g, Vec::new()))
    }
}

/// Frictionless double pendulum, state `(θ₁, θ₂, ω₁, ω₂)`. Chaotic for large
/// initial angles; used to exercise adaptive stepping.
#[derive(Clone, Debug)]
pub struct DoublePendulumField {
    pub gravity: f64,
    pub mass: [f64; 2],
    pub length: [f64; 2],
}

impl Default for DoublePendulumField {
    fn default() -> Self {
        DoublePendulumField {
            gravity: 9.81,
            mass: [1.0, 1.0],
            length: [1.0, 1.0],
        }
    }
}

trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(x: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Scalar for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Forward-mode dual number, used to build the pendulum Jacobian exactly.
#[derive(Clone, Copy, Debug)]
struct Dual {
    re: f64,
    eps: f64,
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, eps: self.eps * o.re + self.re * o.eps }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Dual {
            re: self.re / o.re,
            eps: (self.eps * o.re - self.re * o.eps) / (o.re * o.re),
        }
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}

impl Scalar for Dual {
    fn constant(x: f64) -> Self {
        Dual { re: x, eps: 0.0 }
    }
    fn sin(self) -> Self {
        Dual { re: self.re.sin(), eps: self.eps * self.re.cos() }
    }
    fn cos(self) -> Self {
        Dual { re: self.re.cos(), eps: -self.eps * self.re.sin() }
    }
}

impl DoublePendulumField {
    fn rhs<S: Scalar>(&self, y: [S; 4]) -> [S; 4] {
        let c = S::constant;
        let (g, m1, m2, l1, l2) = (
            c(self.gravity),
            c(self.mass[0]),
            c(self.mass[1]),
            c(self.length[0]),
            c(self.length[1]),
        );
        let [th1, th2, w1, w2] = y;
        let delta = th1 - th2;
        let denom = c(2.0) * m1 + m2 - m2 * (c(2.0) * delta).cos();
        let a1 = (-g * (c(2.0) * m1 + m2) * th1.sin()
            - m2 * g * (th1 - c(2.0) * th2).sin()
            - c(2.0) * delta.sin() * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * delta.cos()))
            / (l1 * denom);
        let a2 = c(2.0)
            * delta.sin()
            * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * th1.cos() + w2 * w2 * l2 * m2 * delta.cos())
            / (l2 * denom);
        [w1, w2, a1, a2]
    }
}

impl VectorField for DoublePendulumField {
    fn dim(&self) -> usize {
        4
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn evaluate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_input(4, t, y)?;
        Ok(self.rhs([y[0], y[1], y[2], y[3]]).to_vec())
    }

    fn vjp(&self, t: f64, y: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_input(4, t, y)?;
        check_cotangent(4, v)?;
        // column j of the Jacobian from one forward-mode sweep seeded on y_j
        let grad = (0..4)
            .map(|j| {
                let seeded: [Dual; 4] = std::array::from_fn(|k| Dual {
                    re: y[k],
                    eps: if k == j { 1.0 } else { 0.0 },
                });
                let col = self.rhs(seeded);
                col.iter().zip(v).map(|(d, vi)| vi * d.eps).sum()
            })
            .collect();
        Ok((grad, Vec::new()))
    }
}

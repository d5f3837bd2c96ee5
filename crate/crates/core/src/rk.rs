//! Explicit Runge-Kutta step functions `Ψ_h(t, y)` defined by Butcher tableaux.
//!
//! `step` returns the increment `Ψ_h = h·Σ bᵢkᵢ` (not the new state), which is
//! the form the reversible scheme consumes. Negative `h` runs the same stage
//! recurrence with a signed step.

use std::fmt;
use std::ops::{Add, Mul};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::field::VectorField;

/// Built-in explicit methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Midpoint,
    Ralston3,
    Rk4,
    Bosh3,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Euler,
        Method::Midpoint,
        Method::Ralston3,
        Method::Rk4,
        Method::Bosh3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Midpoint => "midpoint",
            Method::Ralston3 => "ralston3",
            Method::Rk4 => "rk4",
            Method::Bosh3 => "bosh3",
        }
    }

    pub fn tableau(self) -> ButcherTableau {
        let (a, b, c, b_err, order, emb): (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Option<Vec<f64>>, usize, Option<usize>) =
            match self {
                Method::Euler => (vec![vec![0.0]], vec![1.0], vec![0.0], None, 1, None),
                Method::Midpoint => (
                    vec![vec![0.0, 0.0], vec![0.5, 0.0]],
                    vec![0.0, 1.0],
                    vec![0.0, 0.5],
                    None,
                    2,
                    None,
                ),
                // Ralston's third-order method (minimum local error bound).
                Method::Ralston3 => (
                    vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0], vec![0.0, 0.75, 0.0]],
                    vec![2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0],
                    vec![0.0, 0.5, 0.75],
                    None,
                    3,
                    None,
                ),
                Method::Rk4 => (
                    vec![
                        vec![0.0, 0.0, 0.0, 0.0],
                        vec![0.5, 0.0, 0.0, 0.0],
                        vec![0.0, 0.5, 0.0, 0.0],
                        vec![0.0, 0.0, 1.0, 0.0],
                    ],
                    vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
                    vec![0.0, 0.5, 0.5, 1.0],
                    None,
                    4,
                    None,
                ),
                // Bogacki-Shampine 3(2), written with its FSAL fourth stage.
                Method::Bosh3 => (
                    vec![
                        vec![0.0, 0.0, 0.0, 0.0],
                        vec![0.5, 0.0, 0.0, 0.0],
                        vec![0.0, 0.75, 0.0, 0.0],
                        vec![2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
                    ],
                    vec![2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
                    vec![0.0, 0.5, 0.75, 1.0],
                    Some(vec![7.0 / 24.0, 0.25, 1.0 / 3.0, 0.125]),
                    3,
                    Some(2),
                ),
            };
        ButcherTableau::new(self.name(), a, b, c, b_err, order, emb).expect("built-in tableau is valid")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown solver {s:?}")))
    }
}

/// Coefficients `(A, b, c)` of an explicit method plus optional embedded weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ButcherTableau {
    name: String,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    b_err: Option<Vec<f64>>,
    order: usize,
    embedded_order: Option<usize>,
}

const CONSISTENCY_TOL: f64 = 1e-14;

impl ButcherTableau {
    pub fn new(
        name: &str,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        b_err: Option<Vec<f64>>,
        order: usize,
        embedded_order: Option<usize>,
    ) -> Result<Self> {
        let s = b.len();
        if s == 0 || a.len() != s || c.len() != s || a.iter().any(|row| row.len() != s) {
            return Err(Error::Config(format!("tableau {name}: inconsistent stage counts")));
        }
        if b_err.as_ref().is_some_and(|e| e.len() != s) || b_err.is_some() != embedded_order.is_some() {
            return Err(Error::Config(format!("tableau {name}: malformed embedded weights")));
        }
        for (i, row) in a.iter().enumerate() {
            if row[i..].iter().any(|v| *v != 0.0) {
                return Err(Error::Config(format!("tableau {name}: A is not strictly lower triangular")));
            }
            if (row.iter().sum::<f64>() - c[i]).abs() > CONSISTENCY_TOL {
                return Err(Error::Config(format!("tableau {name}: c[{i}] is not the row sum of A")));
            }
        }
        if (b.iter().sum::<f64>() - 1.0).abs() > CONSISTENCY_TOL {
            return Err(Error::Config(format!("tableau {name}: weights do not sum to one")));
        }
        Ok(ButcherTableau {
            name: name.to_owned(),
            a,
            b,
            c,
            b_err,
            order,
            embedded_order,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn embedded_weights(&self) -> Option<&[f64]> {
        self.b_err.as_deref()
    }

    /// Advertised order `k`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn embedded_order(&self) -> Option<usize> {
        self.embedded_order
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tableau serializes")
    }
}

/// Looks up a built-in tableau by name.
pub fn make_tableau(name: &str) -> Result<ButcherTableau> {
    Ok(name.parse::<Method>()?.tableau())
}

/// Result of one Runge-Kutta step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `Ψ_h(t, y) = h·Σ bᵢkᵢ`.
    pub increment: Vec<f64>,
    /// `h·Σ (bᵢ − b̂ᵢ)kᵢ` when the tableau carries embedded weights.
    pub error: Option<Vec<f64>>,
    /// Stage derivatives `k₁..k_s`, kept only on request.
    pub stages: Option<Vec<Vec<f64>>>,
}

struct Stages {
    inputs: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

fn stage_input(tab: &ButcherTableau, i: usize, y: &[f64], h: f64, slopes: &[Vec<f64>]) -> Vec<f64> {
    let mut yi = y.to_vec();
    for (aij, kj) in tab.a[i][..i].iter().zip(slopes) {
        if *aij != 0.0 {
            for (v, k) in yi.iter_mut().zip(kj) {
                *v += h * aij * k;
            }
        }
    }
    yi
}

fn compute_stages(field: &dyn VectorField, tab: &ButcherTableau, t: f64, y: &[f64], h: f64) -> Result<Stages> {
    if !h.is_finite() {
        return Err(Error::Domain(format!("step size {h} is not finite")));
    }
    ensure_finite("y", y)?;
    let s = tab.stages();
    let mut inputs = Vec::with_capacity(s);
    let mut slopes: Vec<Vec<f64>> = Vec::with_capacity(s);
    for i in 0..s {
        let ti = t + tab.c[i] * h;
        let yi = stage_input(tab, i, y, h, &slopes);
        let diverged = || Error::Divergence { step: None, stage: i, t: ti };
        if yi.iter().any(|v| !v.is_finite()) {
            return Err(diverged());
        }
        let ki = field.evaluate(ti, &yi).map_err(|e| match e {
            Error::Domain(_) => diverged(),
            other => other,
        })?;
        if ki.iter().any(|v| !v.is_finite()) {
            return Err(diverged());
        }
        inputs.push(yi);
        slopes.push(ki);
    }
    Ok(Stages { inputs, slopes })
}

fn weighted_sum(weights: &[f64], slopes: &[Vec<f64>], h: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (w, k) in weights.iter().zip(slopes) {
        if *w != 0.0 {
            for (o, ki) in out.iter_mut().zip(k) {
                *o += w * ki;
            }
        }
    }
    out.iter_mut().for_each(|o| *o *= h);
    out
}

/// Evaluates `Ψ_h(t, y)` and, if available, the embedded error estimate.
pub fn step(field: &dyn VectorField, tab: &ButcherTableau, t: f64, y: &[f64], h: f64) -> Result<StepOutput> {
    step_impl(field, tab, t, y, h, false)
}

/// Like [`step`], but keeps the stage derivatives in the output.
pub fn step_with_stages(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    t: f64,
    y: &[f64],
    h: f64,
) -> Result<StepOutput> {
    step_impl(field, tab, t, y, h, true)
}

fn step_impl(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    t: f64,
    y: &[f64],
    h: f64,
    keep: bool,
) -> Result<StepOutput> {
    let st = compute_stages(field, tab, t, y, h)?;
    let d = y.len();
    let increment = weighted_sum(&tab.b, &st.slopes, h, d);
    let error = tab.b_err.as_ref().map(|be| {
        let diff: Vec<f64> = tab.b.iter().zip(be).map(|(b, e)| b - e).collect();
        weighted_sum(&diff, &st.slopes, h, d)
    });
    Ok(StepOutput {
        increment,
        error,
        stages: keep.then_some(st.slopes),
    })
}

/// Returns `(v·∂Ψ_h/∂y, v·∂Ψ_h/∂θ)` by a reverse sweep through the stage graph.
///
/// Stages are recomputed here rather than cached across the solve.
pub fn step_vjp(
    field: &dyn VectorField,
    tab: &ButcherTableau,
    t: f64,
    y: &[f64],
    h: f64,
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_finite("v", v)?;
    if v.len() != y.len() {
        return Err(Error::Config("cotangent and state dimensions differ".into()));
    }
    let st = compute_stages(field, tab, t, y, h)?;
    let s = tab.stages();
    let d = y.len();
    let mut grad_y = vec![0.0; d];
    let mut grad_theta = vec![0.0; field.num_params()];
    // cotangents of the stage inputs Yᵢ, filled from the last stage backwards
    let mut input_bar: Vec<Vec<f64>> = vec![Vec::new(); s];
    for i in (0..s).rev() {
        let mut k_bar: Vec<f64> = v.iter().map(|vi| h * tab.b[i] * vi).collect();
        for j in i + 1..s {
            let aji = tab.a[j][i];
            if aji != 0.0 {
                for (kb, yb) in k_bar.iter_mut().zip(&input_bar[j]) {
                    *kb += h * aji * yb;
                }
            }
        }
        let ti = t + tab.c[i] * h;
        let (yb, tb) = field.vjp(ti, &st.inputs[i], &k_bar)?;
        for (g, x) in grad_y.iter_mut().zip(&yb) {
            *g += x;
        }
        for (g, x) in grad_theta.iter_mut().zip(&tb) {
            *g += x;
        }
        input_bar[i] = yb;
    }
    Ok((grad_y, grad_theta))
}

fn transfer<T>(tab: &ButcherTableau, z: T) -> T
where
    T: Copy + Add<Output = T> + Mul<Output = T> + From<f64>,
{
    // u = (I − zA)⁻¹·1 by forward substitution; A is strictly lower triangular
    let s = tab.stages();
    let mut u: Vec<T> = Vec::with_capacity(s);
    for i in 0..s {
        let mut acc = T::from(0.0);
        for (aij, uj) in tab.a[i][..i].iter().zip(&u) {
            acc = acc + T::from(*aij) * *uj;
        }
        u.push(T::from(1.0) + z * acc);
    }
    let mut r = T::from(0.0);
    for (bi, ui) in tab.b.iter().zip(&u) {
        r = r + T::from(*bi) * *ui;
    }
    z * r
}

/// `R(z) = z·bᵀ(I − zA)⁻¹𝟙`, so that `Ψ_h(y) = R(hα)·y` on `dy/dt = αy`.
pub fn transfer_function(tab: &ButcherTableau, z: f64) -> f64 {
    transfer(tab, z)
}

pub fn transfer_function_complex(tab: &ButcherTableau, z: Complex64) -> Complex64 {
    transfer(tab, z)
}

const ORDER_TOL: f64 = 1e-12;

/// Largest `k ≤ 4` for which every rooted-tree order condition up to `k`
/// holds for the main weights.
pub fn check_order_conditions(tab: &ButcherTableau) -> usize {
    verified_order(tab, &tab.b)
}

/// Order verified for the embedded weights, if any.
pub fn check_embedded_order(tab: &ButcherTableau) -> Option<usize> {
    tab.b_err.as_ref().map(|w| verified_order(tab, w))
}

fn verified_order(tab: &ButcherTableau, w: &[f64]) -> usize {
    let s = tab.stages();
    let c = &tab.c;
    let a = &tab.a;
    let mat_vec = |x: &[f64]| -> Vec<f64> { (0..s).map(|i| (0..s).map(|j| a[i][j] * x[j]).sum()).collect() };
    let dot = |x: &[f64]| -> f64 { w.iter().zip(x).map(|(wi, xi)| wi * xi).sum() };
    let ones = vec![1.0; s];
    let c2: Vec<f64> = c.iter().map(|x| x * x).collect();
    let c3: Vec<f64> = c.iter().map(|x| x * x * x).collect();
    let ac = mat_vec(c);
    let ac2 = mat_vec(&c2);
    let aac = mat_vec(&ac);
    let c_ac: Vec<f64> = c.iter().zip(&ac).map(|(x, y)| x * y).collect();

    let conditions: [&[(f64, f64)]; 4] = [
        &[(dot(&ones), 1.0)],
        &[(dot(c), 0.5)],
        &[(dot(&c2), 1.0 / 3.0), (dot(&ac), 1.0 / 6.0)],
        &[
            (dot(&c3), 0.25),
            (dot(&c_ac), 0.125),
            (dot(&ac2), 1.0 / 12.0),
            (dot(&aac), 1.0 / 24.0),
        ],
    ];
    conditions
        .iter()
        .take_while(|group| group.iter().all(|(got, want)| (got - want).abs() <= ORDER_TOL))
        .count()
}

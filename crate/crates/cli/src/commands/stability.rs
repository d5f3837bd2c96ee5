use serde::{Deserialize, Serialize};

use revode_core::stability::{boundary_csv, grid_csv, region_scan, verdict_grid};
use revode_core::{Coupling, Method};

use super::Context;
use crate::error::{CliError, CliResult};

/// `points` evenly spaced values from `min` to `max` inclusive.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Linspace {
    fn values(&self) -> CliResult<Vec<f64>> {
        if self.points < 2 || !(self.max > self.min) {
            return Err(CliError::Usage(format!(
                "grid needs max > min and at least 2 points, got [{}, {}] with {}",
                self.min, self.max, self.points
            )));
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        Ok((0..self.points).map(|j| self.min + step * j as f64).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub tableaux: Vec<Method>,
    pub lambdas: Vec<f64>,
    pub h_alpha: Linspace,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            tableaux: Method::ALL.to_vec(),
            lambdas: (1..=100).map(|i| i as f64 / 100.0).collect(),
            h_alpha: Linspace {
                min: -3.0,
                max: 0.0,
                points: 101,
            },
        }
    }
}

pub fn run(ctx: &Context) -> CliResult<()> {
    ctx.reject_engine("stability")?;
    let cfg: StabilityConfig = ctx.load(StabilityConfig::default)?;
    if cfg.lambdas.is_empty() || cfg.tableaux.is_empty() {
        return Err(CliError::Usage("the λ and tableau lists must not be empty".into()));
    }
    let lambdas: Vec<Coupling> = cfg.lambdas.iter().map(|&l| Coupling::new(l)).collect::<Result<_, _>>()?;
    let h_alphas = cfg.h_alpha.values()?;
    ctx.execute("stability", &cfg, ctx.seed, |out| {
        for &method in &cfg.tableaux {
            let tab = method.tableau();
            out.write(&format!("stability_{}_grid.csv", method.name()), grid_csv(&verdict_grid(&tab, &lambdas, &h_alphas)))?;
            out.write(
                &format!("stability_{}_boundary.csv", method.name()),
                boundary_csv(&region_scan(&tab, &lambdas, &h_alphas)),
            )?;
        }
        Ok(())
    })
}

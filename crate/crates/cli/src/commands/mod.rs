pub mod bench;
pub mod convergence;
pub mod gradcheck;
pub mod stability;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use revode_core::Engine;

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub struct Context {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub engine: Option<Engine>,
}

impl Context {
    pub fn load<T: DeserializeOwned>(&self, default: impl FnOnce() -> T) -> CliResult<T> {
        let Some(path) = &self.config else {
            return Ok(default());
        };
        let text = fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::ConfigSyntax {
            path: path.clone(),
            source,
        })
    }

    /// Directory that relative paths inside the config are resolved against.
    pub fn config_dir(&self) -> Option<&Path> {
        self.config.as_deref().and_then(Path::parent)
    }

    pub fn reject_engine(&self, subcommand: &str) -> CliResult<()> {
        match self.engine {
            Some(_) => Err(CliError::Usage(format!("--engine does not apply to {subcommand}"))),
            None => Ok(()),
        }
    }

    /// Runs `body` between opening and closing the run manifest.
    pub fn execute<C: Serialize>(
        &self,
        subcommand: &str,
        config: &C,
        seed: Option<u64>,
        body: impl FnOnce(&mut Outputs) -> CliResult<()>,
    ) -> CliResult<()> {
        let resolved = serde_json::to_value(config).expect("configs serialize");
        let manifest = RunManifest::begin(&self.out, subcommand, resolved, seed)?;
        let mut outputs = Outputs {
            dir: self.out.clone(),
            written: Vec::new(),
        };
        match body(&mut outputs) {
            Ok(()) => manifest.complete(outputs.written),
            Err(e) => {
                manifest.fail(outputs.written, &e)?;
                Err(e)
            }
        }
    }
}

pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    /// Registers `name` as an output and returns its full path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        path
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write(name, text)
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

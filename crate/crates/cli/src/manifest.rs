use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const GIT_DESCRIBE: &str = env!("REVODE_GIT_DESCRIBE");

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

/// Provenance record kept next to a run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub git_describe: String,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let wrap = |source| CliError::Output {
        path: path.to_owned(),
        source,
    };
    fs::write(&tmp, contents).map_err(wrap)?;
    fs::rename(&tmp, path).map_err(wrap)
}

impl RunManifest {
    /// Creates the output directory and records the run as started.
    pub fn begin(out_dir: &Path, subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|source| CliError::Output {
            path: out_dir.to_owned(),
            source,
        })?;
        let manifest = RunManifest {
            subcommand: subcommand.to_owned(),
            config,
            seed,
            git_describe: GIT_DESCRIBE.to_owned(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            error: None,
            path: out_dir.join("manifest.json"),
        };
        manifest.write()?;
        Ok(manifest)
    }

    fn write(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&self.path, text.as_bytes())
    }

    pub fn complete(mut self, outputs: Vec<PathBuf>) -> CliResult<()> {
        self.outputs = outputs;
        self.finished_at = Some(now());
        self.status = RunStatus::Completed;
        self.write()
    }

    pub fn fail(mut self, outputs: Vec<PathBuf>, error: &CliError) -> CliResult<()> {
        self.outputs = outputs;
        self.finished_at = Some(now());
        self.status = RunStatus::Failed;
        self.error = Some(error.to_string());
        self.write()
    }
}

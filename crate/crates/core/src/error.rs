use std::path::PathBuf;

/// Errors produced by solvers, gradient engines and the experiment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A non-finite value was handed to a vector field or loss.
    #[error("domain error: {0}")]
    Domain(String),

    /// A Runge-Kutta stage produced a non-finite value.
    #[error("solver diverged at step {step:?}, stage {stage} (t = {t})")]
    Divergence {
        step: Option<usize>,
        stage: usize,
        t: f64,
    },

    /// Backward reconstruction of the reversible scheme produced a non-finite
    /// state, or (in verification mode) drifted beyond tolerance.
    #[error("reversibility breakdown at step {step}: {detail}")]
    ReversibilityBreakdown { step: usize, detail: String },

    /// The step-size controller asked for a step below `h_min`.
    #[error("step size underflow at t = {t}: proposed h = {h:e} < h_min = {h_min:e}")]
    Stiffness { t: f64, h: f64, h_min: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a step index to a divergence error raised below the step level.
    pub(crate) fn at_step(self, n: usize) -> Self {
        match self {
            Error::Divergence { step: None, stage, t } => Error::Divergence {
                step: Some(n),
                stage,
                t,
            },
            other => other,
        }
    }

    /// True for failures caused by the numerics rather than by the caller.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Divergence { .. }
                | Error::ReversibilityBreakdown { .. }
                | Error::Stiffness { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!(
            "{what}[{i}] is not finite ({})",
            values[i]
        ))),
    }
}

//! Data generation and ingestion, losses over trajectories, AdamW and the training loop.

mod data;
mod optim;
mod train;

pub use data::{
    generate_coupled_oscillator, generate_white_dwarf, generate_white_dwarf_with, ingest_csv, sample_reference,
    uniform_grid, Ingested, Normalization, Trajectory, REFERENCE_H_MAX, VARIANCE_FLOOR,
};
pub use optim::{adamw_update, AdamWConfig, OptimizerState};
pub use train::{mse_loss, train, train_with, DataSource, LogRecord, SchemeKind, Status, Stepping, TrainConfig, TrainOutcome};

use crate::error::Result;
use crate::field::WhiteDwarfField;

/// The white dwarf field for constant `C`.
pub fn white_dwarf_field(c: f64) -> Result<WhiteDwarfField> {
    WhiteDwarfField::new(c)
}

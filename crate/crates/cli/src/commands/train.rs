use std::fs::File;
use std::io::{BufWriter, Write};

use serde::Serialize;

use revode_core::experiments::{train_with, LogRecord, Status, TrainConfig};
use revode_core::Error;

use super::Context;
use crate::error::{CliError, CliResult};

const TREND_WINDOW: usize = 100;

#[derive(Serialize)]
struct Summary {
    final_loss: f64,
    steps: usize,
    retried: usize,
    skipped: usize,
    /// Whether the trailing moving average of the loss ended below the leading one.
    loss_trend_decreasing: Option<bool>,
}

fn trend(log: &[LogRecord]) -> Option<bool> {
    let losses: Vec<f64> = log.iter().filter_map(|r| r.loss).collect();
    if losses.len() < 2 * TREND_WINDOW {
        return None;
    }
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    Some(mean(&losses[losses.len() - TREND_WINDOW..]) < mean(&losses[..TREND_WINDOW]))
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let mut cfg: TrainConfig = ctx.load(TrainConfig::white_dwarf)?;
    if let Some(engine) = ctx.engine {
        cfg.engine = engine;
    }
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let data = cfg.data.load(ctx.config_dir())?;
    ctx.execute("train", &cfg, Some(cfg.seed), |out| {
        let log_path = out.path("train_log.jsonl");
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut writer = BufWriter::new(file);
        let outcome = train_with(&cfg, &data, &mut |record| {
            let line = serde_json::to_string(record)?;
            writeln!(writer, "{line}").map_err(|e| Error::io(&log_path, e))
        })?;
        writer.flush().map_err(|e| Error::io(&log_path, e))?;

        let stem = ctx.out.join("model");
        outcome.params.save(&stem)?;
        out.path("model.params.bin");
        out.path("model.params.json");

        let count = |s: Status| outcome.log.iter().filter(|r| r.status == s).count();
        let summary = Summary {
            final_loss: outcome.final_loss,
            steps: outcome.log.len(),
            retried: count(Status::Retried),
            skipped: count(Status::Skipped),
            loss_trend_decreasing: trend(&outcome.log),
        };
        if summary.loss_trend_decreasing == Some(false) {
            eprintln!("warning: the {TREND_WINDOW}-step moving average of the loss did not decrease");
        }
        out.write_json("train_summary.json", &summary)?;
        if !outcome.final_loss.is_finite() {
            return Err(CliError::CheckFailed("final loss is not finite".into()));
        }
        Ok(())
    })
}

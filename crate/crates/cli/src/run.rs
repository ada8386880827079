//! Runs one (dataset, model, seed) cell: train, write artifacts, report a
//! results row.

use std::path::Path;

use anyhow::Result;
use sigdyn::dde::dataset::DatasetSplit;
use sigdyn::training::{train, TrainConfig, TrainResult};

use crate::experiment::{ModelSpec, ResultsRow, TimingMode};

/// Artifact layout of one run directory.
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const RUN_CSV: &str = "run.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Trains one cell and writes `checkpoint/`, `run.csv`, and `summary.json`
/// under `dir`. With `TimingMode::None` every wall-clock figure is zeroed
/// before export, so identical configurations produce identical bytes.
pub fn run_cell(
    ds: &DatasetSplit,
    spec: &ModelSpec,
    tc: &TrainConfig,
    dir: &Path,
    timing: TimingMode,
) -> Result<(TrainResult, f64)> {
    let mut result = train(spec.encoder.clone(), spec.decoder.clone(), ds, tc)?;
    if timing == TimingMode::None {
        result.record.epoch_seconds.iter_mut().for_each(|s| *s = 0.0);
    }
    std::fs::create_dir_all(dir)?;
    result.save(&dir.join(CHECKPOINT_DIR))?;
    result.record.write_csv(&dir.join(RUN_CSV), timing == TimingMode::Wall)?;
    result.record.write_summary_json(&dir.join(SUMMARY_JSON))?;
    let epochs = result.record.epoch_seconds.len();
    let mean_epoch_seconds = if epochs == 0 {
        0.0
    } else {
        result.record.epoch_seconds.iter().sum::<f64>() / epochs as f64
    };
    Ok((result, mean_epoch_seconds))
}

/// Fills the result columns of `row` from a finished run.
pub fn record_outcome(row: &mut ResultsRow, result: &TrainResult, mean_epoch_seconds: f64) {
    row.test_rmse = Some(result.record.final_test_rmse);
    row.val_rmse = result.meta.best_val_rmse;
    row.best_epoch = Some(result.meta.best_epoch);
    row.epoch_seconds = Some(mean_epoch_seconds);
}

//! Batch experiments: configuration, seeded parallel execution, aggregation
//! and file output.

mod batch;
mod config;
pub mod emit;
pub mod stats;

pub use batch::{
    run_batch, run_batch_full, run_world, RiskLogEntry, RiskPoint, RunOutput, RunRecord, TrajectoryFrame,
    VehicleFrame,
};
pub use config::ExperimentConfig;
pub use emit::{emit, emit_dumps, Headline, Summary};
pub use stats::{aggregate, AggregateStats, Interval, QuantitySeries, StepStat};

use std::path::Path;

use crate::error::Result;

impl ExperimentConfig {
    pub fn interval(&self) -> Interval {
        match self.bootstrap_resamples {
            Some(resamples) => Interval::Bootstrap {
                resamples,
                seed: self.base_seed,
            },
            None => Interval::Normal,
        }
    }
}

/// Runs, aggregates and writes every output file for `config` into `dir`.
pub fn run_and_emit(config: &ExperimentConfig, dir: &Path) -> Result<(Vec<RunRecord>, AggregateStats)> {
    let outputs = run_batch_full(config)?;
    emit_dumps(&outputs, config, dir)?;
    let records: Vec<RunRecord> = outputs.into_iter().map(|o| o.record).collect();
    let stats = aggregate(&records, config.interval())?;
    emit(&stats, &records, config, dir)?;
    Ok((records, stats))
}

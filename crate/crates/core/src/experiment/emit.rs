use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::TerminationReason;

use super::stats::{mean, AggregateStats};
use super::{ExperimentConfig, RunOutput, RunRecord};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const RUNS_FILE: &str = "runs.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const RISK_FILE: &str = "risk.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub n_worlds: usize,
    /// Worlds in which a tracked ego crashed.
    pub total_crashes: usize,
    pub crash_fraction: f64,
    /// Mean over worlds of the last recorded ego loss.
    pub mean_final_loss: f64,
    /// Mean over worlds of the run-averaged ego loss.
    pub mean_loss: f64,
    pub mean_defensive_fraction: f64,
    pub gatekeeper_evaluations: u64,
    pub policy_switches: u64,
    pub terminations: BTreeMap<TerminationReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub headline: Headline,
}

fn run_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        mean(xs)
    }
}

pub fn headline(records: &[RunRecord]) -> Headline {
    let n = records.len();
    let total_crashes = records.iter().filter(|r| r.crash_step().is_some()).count();
    let per_world = |f: &dyn Fn(&RunRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let mut terminations = BTreeMap::new();
    for r in records {
        *terminations.entry(r.termination.reason).or_insert(0) += 1;
    }
    Headline {
        n_worlds: n,
        total_crashes,
        crash_fraction: if n == 0 { 0.0 } else { total_crashes as f64 / n as f64 },
        mean_final_loss: per_world(&|r| r.loss.last().copied().unwrap_or(0.0)),
        mean_loss: per_world(&|r| run_mean(&r.loss)),
        mean_defensive_fraction: per_world(&|r| run_mean(&r.defensive_fraction)),
        gatekeeper_evaluations: records.iter().map(|r| u64::from(r.gatekeeper_evaluations)).sum(),
        policy_switches: records.iter().map(|r| u64::from(r.policy_switches)).sum(),
        terminations,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_timeseries(stats: &AggregateStats, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "step,quantity,mean,lo90,hi90,n").map_err(io)?;
    for s in &stats.series {
        for p in &s.points {
            writeln!(out, "{},{},{},{},{},{}", p.step, s.name, p.mean, p.lo90, p.hi90, p.n).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Writes `summary.json`, `timeseries.csv` and `runs.jsonl` into `dir`.
pub fn emit(stats: &AggregateStats, records: &[RunRecord], config: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = Summary {
        config: config.clone(),
        headline: headline(records),
    };
    let path = dir.join(SUMMARY_FILE);
    let mut out = create(&path)?;
    serde_json::to_writer_pretty(&mut out, &summary).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(&path, e))?;

    write_timeseries(stats, &dir.join(TIMESERIES_FILE))?;
    write_jsonl(&dir.join(RUNS_FILE), records)
}

/// Writes the optional trajectory and risk logs when the runs carry them.
pub fn emit_dumps(outputs: &[RunOutput], config: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if config.dump_trajectories {
        write_jsonl(&dir.join(TRAJECTORIES_FILE), outputs.iter().flat_map(|o| &o.trajectory))?;
    }
    if config.dump_risk {
        write_jsonl(&dir.join(RISK_FILE), outputs.iter().flat_map(|o| &o.risk_log))?;
    }
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(records)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

//! Repetition under increasing truncation limits.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::decode::Strategy;
use crate::error::{Error, Result};
use crate::metrics::rep_n;

use super::config::{ExperimentConfig, SweepSettings};
use super::experiment::{decode_all, jobs, mean_std, Workspace};
use super::write_atomic;

pub const SWEEP_HEADER: &str = "strategy,max_length,mean_rep2,std_rep2,gradient";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub strategy: String,
    pub max_length: usize,
    pub mean: f64,
    /// Sample standard deviation over all outputs of the cell.
    pub std: f64,
    /// Outputs in the cell: prompts × seeds × samples.
    pub count: usize,
    /// Change in mean per unit of max_length since the previous cell; `None`
    /// on the first cell.
    pub gradient: Option<f64>,
}

impl SweepRow {
    pub fn standard_error(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

/// Mean Rep-n per (strategy, max_length) cell. Sampling strategies decode
/// once at the largest limit and truncate, which yields exactly what
/// decoding at each smaller limit would; beam search reranks whole
/// hypotheses and is rerun per cell.
pub fn compute_sweep(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Vec<SweepRow>> {
    let settings: &SweepSettings = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no sweep section".into()))?;
    let jobs = jobs(cfg, ws.prompts.len());
    let longest = *settings.grid.last().expect("validated");
    let mut rows = Vec::new();
    for spec in &cfg.strategies {
        let shared = match spec.decoder {
            Strategy::Beam { .. } => None,
            _ => Some(decode_all(ws, cfg, spec, &jobs, longest)?),
        };
        let mut previous: Option<(usize, f64)> = None;
        for &length in &settings.grid {
            let records = match &shared {
                Some(full) => full.iter().map(|r| r.truncated(length)).collect(),
                None => decode_all(ws, cfg, spec, &jobs, length)?,
            };
            let reps: Vec<f64> = records.iter().map(|r| rep_n(r.content(), settings.rep_n)).collect();
            let (mean, std) = mean_std(&reps);
            let gradient = previous.map(|(l, m)| (mean - m) / (length - l) as f64);
            previous = Some((length, mean));
            rows.push(SweepRow {
                strategy: spec.label().to_owned(),
                max_length: length,
                mean,
                std,
                count: reps.len(),
                gradient,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{SWEEP_HEADER}").unwrap();
    for r in rows {
        let gradient = r.gradient.map(|g| g.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.strategy, r.max_length, r.mean, r.std, gradient).unwrap();
    }
    out
}

/// Computes the sweep and writes `sweep.csv` under the experiment directory.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<(Vec<SweepRow>, PathBuf)> {
    let ws = Workspace::prepare(cfg)?;
    run_sweep_in(cfg, &ws)
}

pub fn run_sweep_in(cfg: &ExperimentConfig, ws: &Workspace) -> Result<(Vec<SweepRow>, PathBuf)> {
    let rows = compute_sweep(cfg, ws)?;
    let path = cfg.experiment_dir().join("sweep.csv");
    write_atomic(&path, sweep_csv(&rows).as_bytes())?;
    Ok((rows, path))
}

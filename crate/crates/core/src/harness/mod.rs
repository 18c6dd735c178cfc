//! Experiment orchestration: configuration, batch decoding with metric
//! reports, the repetition sweep, and report rendering.
//!
//! Every output is a pure function of the config and its seeds. Decodes run
//! in parallel but results are gathered in a fixed order (prompt, seed,
//! sample) before anything is scored or written.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{ExperimentConfig, Prompt, StrategySpec, SweepSettings};
pub use experiment::{run_experiment, ExperimentOutcome, RecordLine, StrategyMetrics, Workspace};
pub use report::{emit_report, Report};
pub use sweep::{run_sweep, SweepRow};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

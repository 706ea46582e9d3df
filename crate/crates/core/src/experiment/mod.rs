//! Experiment drivers: the real-data strategy sweep and the simulated
//! bias-estimation study.

mod bias;
mod sweep;

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub use bias::{
    aggregate_bias, read_bias_trials, run_bias_study, run_bias_trial, write_bias_report, write_bias_trials, BiasConfig,
    BiasReport, BiasReportRow, BiasRow, BiasStudy, BiasTrialResult, TrialFailure, BIAS_REPORT_HEADER,
    BIAS_TRIALS_HEADER,
};
pub use sweep::{
    plan_cells, plan_status, read_sweep_config, rebuild_sweep_results, run_sweep, Cell, CellStatus, StrategyGrid, SweepConfig, SweepOptions,
    SweepOutcome, AGGREGATE_HEADER, MANIFEST_FILE, PER_USER_HEADER, SWEEP_CONFIG_FILE,
};

use crate::error::{Error, Result};

/// Comment lines (`# key: value`) that open every consolidated output file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHeader {
    pub seed: u64,
    /// Resolved configuration as single-line JSON.
    pub config_json: String,
}

impl RunHeader {
    pub fn new<T: serde::Serialize>(seed: u64, config: &T) -> Result<Self> {
        let config_json = serde_json::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(RunHeader { seed, config_json })
    }

    pub fn render(&self) -> String {
        format!(
            "# generator: decoylab {}\n# seed: {}\n# config: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.config_json
        )
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(self.render().as_bytes())
    }
}

/// Splits leading `# key: value` lines from the CSV body.
pub(crate) fn split_comments(text: &str) -> (Vec<(String, String)>, &str) {
    let mut meta = Vec::new();
    let mut rest = text;
    while let Some(line) = rest.strip_prefix('#') {
        let (line, tail) = line.split_once('\n').unwrap_or((line, ""));
        if let Some((k, v)) = line.split_once(':') {
            meta.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        rest = tail;
    }
    (meta, rest)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // write-then-rename so an interrupted run never leaves a truncated file behind
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

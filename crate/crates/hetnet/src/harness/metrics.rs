//! Versioned metrics CSV: one row per training epoch.
//!
//! Schema v1:
//! ```text
//! # schema=hetnet.metrics.v1 label=<label> seed=<seed>
//! epoch,mean_steps,mean_episode_return,success_rate,policy_loss,critic_loss,wall_clock_s
//! ```
//! The numeric columns are written with full `f64` round-trip precision so
//! two runs of the same (config, seed) produce identical rows; only
//! `wall_clock_s` is measured and therefore varies between runs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::HarnessError;

pub const SCHEMA: &str = "hetnet.metrics.v1";
pub const HEADER: &str =
    "epoch,mean_steps,mean_episode_return,success_rate,policy_loss,critic_loss,wall_clock_s";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: u64,
    pub mean_steps: f64,
    pub mean_episode_return: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    fn to_csv(self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.mean_steps,
            self.mean_episode_return,
            self.success_rate,
            self.policy_loss,
            self.critic_loss,
            self.wall_clock_s
        )
        .unwrap();
        s
    }
}

/// Append-only metrics writer. Creates the file with schema line and header
/// on first use; appends rows afterwards.
pub struct MetricsWriter {
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path, label: &str, seed: u64) -> Result<Self, HarnessError> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "# schema={SCHEMA} label={label} seed={seed}")?;
        writeln!(f, "{HEADER}")?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
        })
    }

    /// Open an existing file for appending (resume).
    pub fn append_to(path: &Path) -> Result<Self, HarnessError> {
        if !path.exists() {
            return Err(HarnessError::Config(format!(
                "metrics file {} does not exist",
                path.display()
            )));
        }
        Ok(MetricsWriter {
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, row: MetricsRow) -> Result<(), HarnessError> {
        let mut f = fs::OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", row.to_csv())?;
        Ok(())
    }

    /// Truncate any rows with epoch >= `epoch` (used when resuming from a
    /// checkpoint older than the metrics tail).
    pub fn truncate_from(path: &Path, epoch: u64) -> Result<(), HarnessError> {
        let file = read_metrics(path)?;
        let mut out = String::new();
        writeln!(
            out,
            "# schema={SCHEMA} label={} seed={}",
            file.label, file.seed
        )
        .unwrap();
        writeln!(out, "{HEADER}").unwrap();
        for (raw, row) in file.raw_rows.iter().zip(&file.rows) {
            if row.epoch < epoch {
                writeln!(out, "{raw}").unwrap();
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MetricsFile {
    pub label: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    raw_rows: Vec<String>,
}

/// Parse a metrics CSV, reporting the first malformed row by line number.
pub fn read_metrics(path: &Path) -> Result<MetricsFile, HarnessError> {
    let text = fs::read_to_string(path)?;
    let fname = path.display().to_string();
    let mut label = String::new();
    let mut seed = 0u64;
    let mut rows = Vec::new();
    let mut raw_rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |msg: String| HarnessError::Csv {
            file: fname.clone(),
            line: lineno,
            msg,
        };
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for part in meta.split_whitespace() {
                if let Some(v) = part.strip_prefix("schema=") {
                    if v != SCHEMA {
                        return Err(err(format!("unsupported schema {v}")));
                    }
                } else if let Some(v) = part.strip_prefix("label=") {
                    label = v.to_string();
                } else if let Some(v) = part.strip_prefix("seed=") {
                    seed = v
                        .parse()
                        .map_err(|_| err(format!("bad seed value {v}")))?;
                }
            }
            continue;
        }
        if !saw_header {
            if line != HEADER {
                return Err(err(format!("expected header '{HEADER}', got '{line}'")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", fields.len())));
        }
        let parse = |idx: usize| -> Result<f64, HarnessError> {
            fields[idx]
                .parse::<f64>()
                .map_err(|_| err(format!("field {} is not a number: '{}'", idx + 1, fields[idx])))
        };
        rows.push(MetricsRow {
            epoch: fields[0]
                .parse()
                .map_err(|_| err(format!("bad epoch '{}'", fields[0])))?,
            mean_steps: parse(1)?,
            mean_episode_return: parse(2)?,
            success_rate: parse(3)?,
            policy_loss: parse(4)?,
            critic_loss: parse(5)?,
            wall_clock_s: parse(6)?,
        });
        raw_rows.push(line.to_string());
    }
    if !saw_header {
        return Err(HarnessError::Csv {
            file: fname,
            line: 1,
            msg: "missing header row".into(),
        });
    }
    Ok(MetricsFile {
        label,
        seed,
        rows,
        raw_rows,
    })
}

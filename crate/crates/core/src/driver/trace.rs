use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    March,
}

/// One optimization step. `energy` and `stderr` describe the batch the step
/// was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub phase: Phase,
    pub energy: f64,
    pub stderr: f64,
    pub grad_norm: f64,
    pub eta_eff: f64,
    pub update_norm: f64,
    pub acceptance: f64,
    pub unique_samples: usize,
    pub wall_time: f64,
}

impl TraceRecord {
    /// Everything except wall time, which is the only field allowed to
    /// differ between two runs with the same seed.
    pub fn same_run_as(&self, other: &TraceRecord) -> bool {
        TraceRecord {
            wall_time: 0.0,
            ..self.clone()
        } == TraceRecord {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Append-only CSV trace.
pub struct TraceWriter {
    inner: csv::Writer<File>,
}

impl TraceWriter {
    /// Creates the file, or appends to it without a second header when `append` is set.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(exists)
            .truncate(!exists)
            .open(path)?;
        let inner = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        Ok(TraceWriter { inner })
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<()> {
        self.inner.serialize(record).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// Final JSON summary of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_phase: Phase,
    pub march_started_at: Option<u64>,
    /// Mean batch energy over the last `window` steps.
    pub energy: f64,
    /// Standard error of that mean, treating steps as independent.
    pub energy_stderr: f64,
    pub window: usize,
    pub n_params: usize,
    pub fingerprint: String,
    pub wall_time: f64,
}

/// `(mean, stderr)` of the last `window` energies.
pub fn tail_mean(records: &[TraceRecord], window: usize) -> (f64, f64, usize) {
    let tail = &records[records.len().saturating_sub(window)..];
    let k = tail.len();
    if k == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = tail.iter().map(|r| r.energy).sum::<f64>() / k as f64;
    let var = tail.iter().map(|r| (r.energy - mean).powi(2)).sum::<f64>() / k as f64;
    (mean, (var / k as f64).sqrt(), k)
}

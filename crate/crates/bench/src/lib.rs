//! Experiment drivers for the rollout server: throughput scaling, the
//! batch-versus-async trainer comparison, component ablations and the
//! pipeline overlap measurement. Every driver returns plain rows that
//! serialize to CSV.

pub mod ablation;
pub mod cluster;
pub mod dapo;
pub mod overlap;
pub mod scaling;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use rollout_core::trainer::{ClientError, TrainerError, WorkloadError};
use rollout_core::JobStatus;

pub use cluster::{Audit, Cluster};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("job {job_id} ended {status:?}: {detail}")]
    Job { job_id: String, status: JobStatus, detail: String },
    #[error("resources leaked after the run: {0:?}")]
    Leak(Audit),
    #[error("{0}")]
    Invalid(String),
}

/// Writes `rows` as CSV with a header line, to `path` or stdout.
pub fn write_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<(), BenchError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

/// One reward observation, appended as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub iteration: u64,
    pub prompt_id: String,
    pub rollout_index: usize,
    /// Null for a rollout that failed with an error.
    pub reward: Option<f64>,
    /// Seconds since the trainer started.
    pub wall_time: f64,
    /// Rollout server that produced the observation.
    pub address: String,
}

/// Append-only JSONL ledger, optionally also kept in memory.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    inner: Arc<Mutex<LedgerInner>>,
}

#[derive(Debug, Default)]
struct LedgerInner {
    file: Option<BufWriter<File>>,
    records: Vec<LedgerRecord>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner: Arc::new(Mutex::new(LedgerInner { file: Some(BufWriter::new(file)), records: Vec::new() })) })
    }

    pub fn append(&self, record: LedgerRecord) -> std::io::Result<()> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = inner.file.as_mut() {
            serde_json::to_writer(&mut *f, &record)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        inner.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<LedgerRecord> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).records.clone()
    }

    pub fn read(path: &Path) -> std::io::Result<Vec<LedgerRecord>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
            .collect()
    }
}

//! Append-only profile store.
//!
//! One JSON object per line, appended as profiles arrive and never
//! rewritten. Receive metadata (sender address, arrival time) is kept
//! alongside each profile when the profile came over the network; locally
//! generated stores omit it so two runs over the same input produce
//! identical files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::PerformanceProfile;

/// Where and when a stored profile arrived.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiveMeta {
    pub peer: SocketAddr,
    pub recv_unix_ns: u64,
}

/// One line of the store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredProfile {
    pub profile: PerformanceProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received: Option<ReceiveMeta>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Writer half of the store. Lines are flushed as they are appended so a
/// killed collector loses at most the record being written.
pub struct ProfileStore {
    writer: BufWriter<File>,
}

impl ProfileStore {
    /// Open `path` for appending, creating it if needed.
    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ProfileStore { writer: BufWriter::new(file) })
    }

    pub fn append(&mut self, record: &StoredProfile) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

/// Read every record of a store file.
pub fn read_all(path: &Path) -> Result<Vec<StoredProfile>, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|source| StoreError::Parse { line: idx + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, PersistError};
use crate::canonical;
use crate::ids::TimestampMs;
use crate::protocol::WireEnvelope;

pub const LOG_FILE: &str = "session.log";

/// One sequenced reliable envelope and the relay's wall time when it was
/// sequenced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub envelope: WireEnvelope,
    pub wall_time: TimestampMs,
}

impl LogRecord {
    pub fn seq(&self) -> u64 {
        self.envelope.server_seq.unwrap_or(0)
    }
}

/// Append-only writer; every record is flushed before `append` returns.
pub struct SessionLogWriter {
    path: PathBuf,
    file: File,
    last_seq: u64,
}

impl SessionLogWriter {
    pub fn create(path: &Path) -> Result<Self, PersistError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_seq: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), PersistError> {
        let seq = record.envelope.server_seq.ok_or_else(|| PersistError::CorruptRecord {
            line: 0,
            reason: "envelope has no server_seq".into(),
        })?;
        assert!(seq > self.last_seq, "log sequence must increase ({seq} after {})", self.last_seq);
        let mut line = canonical::to_vec(record);
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.last_seq = seq;
        Ok(())
    }
}

/// Records read up to the first unreadable line.
#[derive(Debug)]
pub struct LoadedLog {
    pub records: Vec<LogRecord>,
    pub corrupt: Option<PersistError>,
}

impl LoadedLog {
    pub fn into_result(self) -> Result<Vec<LogRecord>, PersistError> {
        match self.corrupt {
            Some(e) => Err(e),
            None => Ok(self.records),
        }
    }
}

/// Reads a session log. Lines are 1-based in error reports. Reading stops
/// at the first record that fails to decode or breaks sequence order.
pub fn load_log(path: &Path) -> Result<LoadedLog, PersistError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut records: Vec<LogRecord> = Vec::new();
    let mut corrupt = None;
    let mut body = &bytes[..];
    if body.last() == Some(&b'\n') {
        body = &body[..body.len() - 1];
    }
    if !body.is_empty() {
        for (i, line) in body.split(|&b| b == b'\n').enumerate() {
            let lineno = i + 1;
            let rec: LogRecord = match serde_json::from_slice(line) {
                Ok(r) => r,
                Err(e) => {
                    corrupt = Some(PersistError::CorruptRecord {
                        line: lineno,
                        reason: e.to_string(),
                    });
                    break;
                }
            };
            let prev = records.last().map(LogRecord::seq).unwrap_or(0);
            match rec.envelope.server_seq {
                Some(s) if s > prev => records.push(rec),
                other => {
                    corrupt = Some(PersistError::CorruptRecord {
                        line: lineno,
                        reason: format!("server_seq {other:?} does not follow {prev}"),
                    });
                    break;
                }
            }
        }
    }
    Ok(LoadedLog { records, corrupt })
}

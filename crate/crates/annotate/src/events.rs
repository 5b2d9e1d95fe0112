//! Append-only event log, one JSON record per line.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use revcorpus::evaluation::sampling::FrameItem;
use revcorpus::evaluation::Judgment;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub event_id: u64,
    pub at: DateTime<Utc>,
    pub session_id: String,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        frame_id: String,
        frame: Vec<FrameItem>,
        annotators: Vec<String>,
        calibration_size: usize,
        /// Presentation order of the calibration items, one per annotator.
        orders: Vec<Vec<u32>>,
    },
    LabelSubmitted {
        annotator: String,
        sample_id: u32,
        alias: String,
        judgment: Judgment,
    },
    Resolved {
        annotator: String,
        sample_id: u32,
        alias: String,
        judgment: Judgment,
    },
    Flagged {
        annotator: String,
        sample_id: u32,
        alias: String,
        #[serde(default)]
        note: String,
    },
    Closed {
        annotator: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (creating if needed) and returns every complete entry.
    ///
    /// A trailing line without its newline was never acknowledged and is
    /// cut off.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogEntry>), LogError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;
        let complete = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < raw.len() {
            log::warn!(
                "{}: dropping {} bytes of an unfinished entry",
                path.display(),
                raw.len() - complete
            );
            file.set_len(complete as u64)?;
        }
        let text = std::str::from_utf8(&raw[..complete]).map_err(|e| LogError::Corrupt {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line).map_err(|e| LogError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok((
            Self {
                path: path.to_owned(),
                file,
            },
            entries,
        ))
    }

    /// Returns once the entry is on disk.
    pub fn append(&mut self, entry: &LogEntry) -> Result<(), LogError> {
        let mut line = serde_json::to_string(entry).expect("log entry serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64) -> LogEntry {
        LogEntry {
            event_id: id,
            at: "2024-03-01T10:00:00Z".parse().unwrap(),
            session_id: "s".into(),
            event: Event::Closed { annotator: "a".into() },
        }
    }

    #[test]
    fn append_then_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/events.jsonl");
        let (mut log, existing) = EventLog::open(&path).unwrap();
        assert!(existing.is_empty());
        log.append(&entry(1)).unwrap();
        log.append(&entry(2)).unwrap();
        drop(log);
        let (_, entries) = EventLog::open(&path).unwrap();
        assert_eq!(entries, vec![entry(1), entry(2)]);
    }

    #[test]
    fn unfinished_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let (mut log, _) = EventLog::open(&path).unwrap();
        log.append(&entry(1)).unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event_id\":2,\"at").unwrap();
        drop(f);
        let (mut log, entries) = EventLog::open(&path).unwrap();
        assert_eq!(entries, vec![entry(1)]);
        log.append(&entry(2)).unwrap();
        let (_, entries) = EventLog::open(&path).unwrap();
        assert_eq!(entries.len(), 2);
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(EventLog::open(&path), Err(LogError::Corrupt { line: 1, .. })));
    }
}

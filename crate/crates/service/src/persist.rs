//! On-disk layout: one directory per session holding `events.jsonl` and an
//! optional `checkpoint.json`.
//!
//! Each event is one JSON line, written with a single `write` and synced
//! before the caller acknowledges it. A final line without its newline is
//! the remains of a write interrupted by a crash; it was never acknowledged
//! and is dropped on restore. Any other unreadable line is corruption.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::records::{Checkpoint, Event};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug)]
pub struct EventLog {
    file: File,
    path: PathBuf,
}

impl EventLog {
    /// Creates the session directory and an empty log.
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(EVENTS_FILE);
        let file = OpenOptions::new().append(true).create_new(true).open(&path)?;
        sync_dir(dir)?;
        if let Some(parent) = dir.parent() {
            sync_dir(parent)?;
        }
        Ok(Self { file, path })
    }

    pub fn open(dir: &Path) -> io::Result<Self> {
        let path = dir.join(EVENTS_FILE);
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { file, path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one event and syncs it to disk. On failure the log is cut
    /// back to its previous length.
    pub fn append(&mut self, event: &Event) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        let before = self.file.metadata()?.len();
        let written = self.file.write_all(&line).and_then(|_| self.file.sync_data());
        if written.is_err() {
            let _ = self.file.set_len(before);
        }
        written
    }
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

#[derive(Debug)]
pub struct LogContents {
    pub events: Vec<Event>,
    /// Byte length of the complete lines, when a partial final line was found.
    pub torn_tail_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogError {
    Io(String),
    Corrupt { line: usize, message: String },
}

impl std::fmt::Display for LogError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogError::Io(m) => write!(f, "cannot read log: {m}"),
            LogError::Corrupt { line, message } => write!(f, "corrupt log line {line}: {message}"),
        }
    }
}

pub fn read_log(dir: &Path) -> Result<LogContents, LogError> {
    let bytes = fs::read(dir.join(EVENTS_FILE)).map_err(|e| LogError::Io(e.to_string()))?;
    let mut events = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|b| *b == b'\n') else {
            return Ok(LogContents { events, torn_tail_at: Some(offset as u64) });
        };
        let line = &rest[..end];
        let event: Event = serde_json::from_slice(line)
            .map_err(|e| LogError::Corrupt { line: line_no, message: e.to_string() })?;
        events.push(event);
        offset += end + 1;
    }
    Ok(LogContents { events, torn_tail_at: None })
}

/// Cuts the log back to its last complete line.
pub fn truncate_log(dir: &Path, len: u64) -> io::Result<()> {
    let file = OpenOptions::new().write(true).open(dir.join(EVENTS_FILE))?;
    file.set_len(len)?;
    file.sync_all()
}

/// Replaces the checkpoint atomically.
pub fn write_checkpoint(dir: &Path, checkpoint: &Checkpoint) -> io::Result<()> {
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    let mut file = File::create(&tmp)?;
    file.write_all(&serde_json::to_vec(checkpoint).map_err(io::Error::other)?)?;
    file.sync_all()?;
    fs::rename(&tmp, dir.join(CHECKPOINT_FILE))?;
    sync_dir(dir)
}

pub fn read_checkpoint(dir: &Path) -> Option<Result<Checkpoint, String>> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return None;
    }
    Some(
        fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string())),
    )
}

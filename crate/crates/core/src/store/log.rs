//! Line-delimited mutation log.
//!
//! Every mutation of a journaling store yields one [`LogEvent`]. Events carry
//! everything needed to replay them (embeddings, the updated global summary),
//! so replay never calls an adapter.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::identity::PersonEntity;
use crate::snapshot::StoredEmbedding;
use crate::types::{ClipNode, FactNode, Link, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    AddClip {
        seq: u64,
        clip: ClipNode,
        facts: Vec<FactNode>,
        embeddings: Vec<StoredEmbedding>,
    },
    UpdateGlobal {
        seq: u64,
        summary: String,
    },
    AttachLinks {
        seq: u64,
        source: NodeId,
        links: Vec<Link>,
    },
    UpsertPerson {
        seq: u64,
        person: PersonEntity,
    },
}

impl LogEvent {
    pub fn seq(&self) -> u64 {
        match self {
            LogEvent::AddClip { seq, .. }
            | LogEvent::UpdateGlobal { seq, .. }
            | LogEvent::AttachLinks { seq, .. }
            | LogEvent::UpsertPerson { seq, .. } => *seq,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LogEvent::AddClip { .. } => "add_clip",
            LogEvent::UpdateGlobal { .. } => "update_global",
            LogEvent::AttachLinks { .. } => "attach_links",
            LogEvent::UpsertPerson { .. } => "upsert_person",
        }
    }
}

/// Append-only writer.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EventLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, events: &[LogEvent]) -> Result<(), StoreError> {
        for ev in events {
            serde_json::to_writer(&mut self.out, ev).expect("log event serializes");
            self.out.write_all(b"\n").map_err(|e| StoreError::io(&self.path, e))?;
        }
        self.flush()
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.out.flush().map_err(|e| StoreError::io(&self.path, e))?;
        self.out.get_ref().sync_data().map_err(|e| StoreError::io(&self.path, e))
    }
}

/// Reads a log. A torn final line (a crash mid-append) is ignored; any other
/// unreadable line is an error.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogEvent>, StoreError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    let mut lines: Vec<String> = Vec::new();
    let mut reader = BufReader::new(file);
    loop {
        let mut buf = String::new();
        let n = reader.read_line(&mut buf).map_err(|e| StoreError::io(path, e))?;
        if n == 0 {
            break;
        }
        lines.push(buf);
    }
    let mut events = Vec::with_capacity(lines.len());
    let last = lines.len();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEvent>(line) {
            Ok(ev) => events.push(ev),
            Err(_) if i + 1 == last && !line.ends_with('\n') => break,
            Err(e) => {
                return Err(StoreError::Log {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

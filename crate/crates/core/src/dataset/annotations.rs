//! Append-only JSON-lines store of annotator choices.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub prompt_id: String,
    pub chosen_model_id: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Reads every complete record. A final line without a newline is a torn
/// write from an interrupted append and is ignored.
pub fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>, StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.len() < text.len() {
        log::warn!("{}: ignoring torn final line", path.display());
    }
    let mut out = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Latest record per `(annotator_id, prompt_id)`, ordered by that key.
///
/// Equal timestamps are broken by `chosen_model_id` so the result does not
/// depend on input order.
pub fn effective_records(records: &[AnnotationRecord]) -> Vec<AnnotationRecord> {
    let mut latest: BTreeMap<(&str, &str), &AnnotationRecord> = BTreeMap::new();
    for r in records {
        let key = (r.annotator_id.as_str(), r.prompt_id.as_str());
        let replace = match latest.get(&key) {
            None => true,
            Some(cur) => {
                (r.timestamp, &r.chosen_model_id) > (cur.timestamp, &cur.chosen_model_id)
            }
        };
        if replace {
            latest.insert(key, r);
        }
    }
    latest.into_values().cloned().collect()
}

/// Single-writer handle on the store.
#[derive(Debug)]
pub struct AnnotationLog {
    path: PathBuf,
    file: File,
}

impl AnnotationLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        // drop a torn final line left by an interrupted append
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if keep < bytes.len() {
            log::warn!("{}: truncating torn final line", path.display());
            file.set_len(keep as u64).map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        Ok(Self {
            path,
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and syncs it to disk before returning.
    pub fn append(&mut self, record: &AnnotationRecord) -> Result<(), StoreError> {
        let mut line = Vec::with_capacity(160);
        serde_json::to_writer(&mut line, record).expect("record serializes");
        line.push(b'\n');
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        Ok(())
    }
}

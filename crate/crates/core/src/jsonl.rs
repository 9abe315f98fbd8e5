//! JSON-Lines files with a typed header line.
//!
//! Every dataset artifact in the pipeline is a JSONL file whose first line
//! is a header object (format version plus provenance digests) followed by
//! one canonical-JSON row per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: empty file, missing header")]
    MissingHeader { path: String },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> JsonlError {
    JsonlError::Io { path: path.display().to_string(), source }
}

/// Write a header line followed by one row per line.
pub fn write_jsonl<H, T>(path: &Path, header: &H, rows: &[T]) -> Result<(), JsonlError>
where
    H: Serialize,
    T: Serialize,
{
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |value: String| -> Result<(), JsonlError> {
        w.write_all(value.as_bytes()).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))
    };
    emit(serde_json::to_string(header).expect("header serializes"))?;
    for row in rows {
        emit(serde_json::to_string(row).expect("row serializes"))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a header line and all rows.
pub fn read_jsonl<H, T>(path: &Path) -> Result<(H, Vec<T>), JsonlError>
where
    H: DeserializeOwned,
    T: DeserializeOwned,
{
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| io_err(path, e))?;
            serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
                path: path.display().to_string(),
                line: 1,
                source: e,
            })?
        }
        None => return Err(JsonlError::MissingHeader { path: path.display().to_string() }),
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            source: e,
        })?);
    }
    Ok((header, rows))
}

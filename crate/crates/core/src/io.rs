//! Record-lines file handling and atomic writes.
//!
//! Artifacts are written to a temporary file in the destination
//! directory and renamed into place, so a crashed run never leaves a
//! half-written file behind.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{:02x}", b));
    }
    out
}

/// Read a record-lines file: one JSON value per non-blank line.
/// Parse failures report the 1-based line number.
pub fn read_record_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

/// Serialize `records` one JSON object per line.
pub fn to_record_lines<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// Write `bytes` to `path` atomically: stage in a temp file beside the
/// destination, flush, then rename over it.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Atomic write of a single pretty-printed JSON document plus trailing
/// newline — the shape every non-record-lines artifact uses.
pub fn write_json_doc<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(doc).expect("doc serialization cannot fail");
    body.push('\n');
    atomic_write(path, body.as_bytes())
}

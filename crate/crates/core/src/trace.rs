//! Per-token surprisal traces: the bridge between whatever model
//! scored a sample and the detector. Traces can come from the built-in
//! surrogate or from an external model via the record-lines file form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Per-token negative log-probabilities (nats) for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalTrace {
    pub sample_id: String,
    pub tokens: Vec<String>,
    pub surprisal: Vec<f64>,
}

impl SurprisalTrace {
    pub fn len(&self) -> usize {
        self.surprisal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surprisal.is_empty()
    }
}

/// Load traces from record-lines; every line must have one surprisal
/// value per token.
pub fn load_traces(path: &Path) -> Result<Vec<SurprisalTrace>> {
    let rows: Vec<(usize, SurprisalTrace)> = io::read_record_lines(path)?;
    for (line, t) in &rows {
        if t.tokens.len() != t.surprisal.len() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: *line,
                reason: format!(
                    "trace {:?} has {} tokens but {} surprisal values",
                    t.sample_id,
                    t.tokens.len(),
                    t.surprisal.len()
                ),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, t)| t).collect())
}

/// Write traces as record-lines, atomically.
pub fn save_traces(traces: &[SurprisalTrace], path: &Path) -> Result<()> {
    io::atomic_write(path, io::to_record_lines(traces).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_length_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let traces = vec![SurprisalTrace {
            sample_id: "a".into(),
            tokens: vec!["x".into(), "y".into()],
            surprisal: vec![0.5, 2.25],
        }];
        save_traces(&traces, &path).unwrap();
        assert_eq!(load_traces(&path).unwrap(), traces);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, r#"{"sample_id":"a","tokens":["x"],"surprisal":[1.0,2.0]}"#).unwrap();
        assert!(matches!(load_traces(&bad).unwrap_err(), Error::MalformedRecord { .. }));
    }
}

//! Outcome metrics: infection rate over generated responses, its
//! topic-conditional variant, and topic relevance of query pools.
//!
//! All text matching is normalization-based: runs of whitespace
//! collapse to single spaces and comparison is case-insensitive, so a
//! payload reproduced with incidental reformatting still counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::text::{contains_normalized, normalize_match};

/// One model output paired with the query that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub id: String,
    pub query: String,
    pub response: String,
}

/// A batch of generated outputs, typically one simulator generation.
#[derive(Debug, Clone, Default)]
pub struct SyntheticSet {
    pub records: Vec<SyntheticRecord>,
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Load from record lines. Ids default to the record position;
    /// responses may be empty (a generator can produce nothing), but
    /// the field itself must be present.
    pub fn load(path: &Path) -> Result<SyntheticSet> {
        #[derive(Deserialize)]
        struct RawSynthetic {
            id: Option<String>,
            query: Option<String>,
            response: Option<String>,
        }
        let rows: Vec<(usize, RawSynthetic)> = io::read_record_lines(path)?;
        if rows.is_empty() {
            return Err(Error::EmptyCorpus { path: path.to_path_buf() });
        }
        let mut seen = std::collections::HashSet::new();
        let mut records = Vec::with_capacity(rows.len());
        for (position, (line, raw)) in rows.into_iter().enumerate() {
            let malformed = |reason: &str| Error::MalformedRecord {
                path: path.to_path_buf(),
                line,
                reason: reason.into(),
            };
            let query = raw.query.unwrap_or_default();
            if query.trim().is_empty() {
                return Err(malformed("missing or empty `query`"));
            }
            let response = raw.response.ok_or_else(|| malformed("missing `response`"))?;
            let id = raw.id.unwrap_or_else(|| position.to_string());
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId { id, line });
            }
            records.push(SyntheticRecord { id, query, response });
        }
        Ok(SyntheticSet { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, io::to_record_lines(&self.records).as_bytes())
    }
}

/// A named topic with its match phrases. A query belongs to the topic
/// when it contains at least one phrase (case- and
/// whitespace-insensitively).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicSpec {
    pub name: String,
    pub match_terms: Vec<String>,
}

impl TopicSpec {
    pub fn validate(&self) -> Result<()> {
        if self.match_terms.iter().all(|t| normalize_match(t).is_empty()) {
            return Err(Error::EmptyTopic { name: self.name.clone() });
        }
        Ok(())
    }

    pub fn matches(&self, text: &str) -> bool {
        self.match_terms
            .iter()
            .filter(|t| !normalize_match(t).is_empty())
            .any(|t| contains_normalized(text, t))
    }
}

/// Load topic specs from a JSON array file.
pub fn load_topics(path: &Path) -> Result<Vec<TopicSpec>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let topics: Vec<TopicSpec> = serde_json::from_str(&raw).map_err(|e| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 1,
        reason: e.to_string(),
    })?;
    for t in &topics {
        t.validate()?;
    }
    Ok(topics)
}

fn validate_key(detection_key: &str) -> Result<()> {
    if normalize_match(detection_key).is_empty() {
        return Err(Error::BadDetectionKey { key: detection_key.to_string() });
    }
    Ok(())
}

/// Fraction of texts containing the detection key after normalization.
fn fraction_containing<'a, I>(texts: I, detection_key: &str) -> Result<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    validate_key(detection_key)?;
    let mut total = 0usize;
    let mut hits = 0usize;
    for t in texts {
        total += 1;
        if contains_normalized(t, detection_key) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyMeasurementSet);
    }
    Ok(hits as f64 / total as f64)
}

/// Infection rate: the fraction of responses carrying the detection
/// key.
pub fn infection_rate(set: &SyntheticSet, detection_key: &str) -> Result<f64> {
    fraction_containing(set.records.iter().map(|r| r.response.as_str()), detection_key)
}

/// Infection rate restricted to responses whose query matches `topic`.
/// Erring when the topic matches nothing keeps a "0 of 0" from reading
/// as a clean result.
pub fn conditional_infection_rate(
    set: &SyntheticSet,
    detection_key: &str,
    topic: &TopicSpec,
) -> Result<f64> {
    validate_key(detection_key)?;
    topic.validate()?;
    let matched: Vec<&str> = set
        .records
        .iter()
        .filter(|r| topic.matches(&r.query))
        .map(|r| r.response.as_str())
        .collect();
    if matched.is_empty() {
        return Err(Error::EmptyConditionMatch { topic: topic.name.clone() });
    }
    fraction_containing(matched, detection_key)
}

/// Fraction of queries that belong to the topic.
pub fn topic_relevance(queries: &[String], topic: &TopicSpec) -> Result<f64> {
    topic.validate()?;
    if queries.is_empty() {
        return Err(Error::EmptyMeasurementSet);
    }
    let hits = queries.iter().filter(|q| topic.matches(q)).count();
    Ok(hits as f64 / queries.len() as f64)
}

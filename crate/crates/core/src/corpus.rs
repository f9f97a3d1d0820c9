//! SFT corpus records and the record-lines format they live in.
//!
//! A corpus is an ordered list of `{id, query, response, label,
//! scenario_tag}` samples. The checksum is a pure function of the
//! ordered canonical records, so two corpora with the same content
//! always hash the same regardless of where they were read from.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Provenance label attached to each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    #[default]
    Clean,
    /// Payload spliced into the response in place.
    ViaPoisoned,
    /// Whole record replaced by a serialized standalone poison sample.
    PlainPoisoned,
}

impl Label {
    pub fn is_poisoned(self) -> bool {
        !matches!(self, Label::Clean)
    }
}

/// One query/response training pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub id: String,
    pub query: String,
    pub response: String,
    #[serde(default)]
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_tag: Option<String>,
}

/// An ordered sample collection plus its content checksum.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<SftSample>,
    pub source_path: Option<PathBuf>,
    pub checksum: String,
}

impl Corpus {
    /// Build a corpus from in-memory samples, running the same
    /// validation as a file load: non-empty query/response, unique ids.
    pub fn from_samples(samples: Vec<SftSample>) -> Result<Corpus> {
        let mut seen = HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            if s.query.trim().is_empty() {
                return Err(Error::InvalidConfig {
                    reason: format!("sample {:?} has an empty query", s.id),
                });
            }
            if s.response.trim().is_empty() {
                return Err(Error::InvalidConfig {
                    reason: format!("sample {:?} has an empty response", s.id),
                });
            }
            if !seen.insert(s.id.clone()) {
                return Err(Error::DuplicateId { id: s.id.clone(), line: i + 1 });
            }
        }
        let checksum = checksum_of(&samples);
        Ok(Corpus { samples, source_path: None, checksum })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_by_id(&self, id: &str) -> Option<&SftSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Canonical record-lines serialization: the exact bytes the
    /// checksum is computed over.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        io::to_record_lines(&self.samples).into_bytes()
    }

    /// Write the corpus to `path` atomically in canonical form.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, &self.to_canonical_bytes())
    }
}

/// SHA-256 (lowercase hex) over the canonical record lines.
pub fn checksum_of(samples: &[SftSample]) -> String {
    io::sha256_hex(io::to_record_lines(samples).as_bytes())
}

/// Raw parse shape for one corpus line. Extra fields in real-world
/// exports are tolerated and dropped; absent fields get defaults where
/// the format allows it.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    query: Option<String>,
    response: Option<String>,
    label: Option<String>,
    scenario_tag: Option<String>,
}

fn parse_label(raw: &str) -> Option<Label> {
    match raw {
        "clean" => Some(Label::Clean),
        "via_poisoned" => Some(Label::ViaPoisoned),
        "plain_poisoned" => Some(Label::PlainPoisoned),
        _ => None,
    }
}

/// Load a record-lines corpus file.
///
/// Samples without an explicit id get their 0-based record position as
/// id. A record with a blank query or response, an unknown label, or a
/// duplicate id aborts the load with the offending line number.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let rows: Vec<(usize, RawRecord)> = io::read_record_lines(path)?;
    if rows.is_empty() {
        return Err(Error::EmptyCorpus { path: path.to_path_buf() });
    }

    let mut samples = Vec::with_capacity(rows.len());
    let mut seen: HashSet<String> = HashSet::new();
    for (position, (line, raw)) in rows.into_iter().enumerate() {
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let query = raw.query.unwrap_or_default();
        if query.trim().is_empty() {
            return Err(malformed("missing or empty `query`".into()));
        }
        let response = raw.response.unwrap_or_default();
        if response.trim().is_empty() {
            return Err(malformed("missing or empty `response`".into()));
        }
        let label = match raw.label.as_deref() {
            None => Label::Clean,
            Some(raw_label) => parse_label(raw_label)
                .ok_or_else(|| malformed(format!("unknown label {:?}", raw_label)))?,
        };
        let id = raw.id.unwrap_or_else(|| position.to_string());
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id, line });
        }
        samples.push(SftSample { id, query, response, label, scenario_tag: raw.scenario_tag });
    }

    let checksum = checksum_of(&samples);
    Ok(Corpus { samples, source_path: Some(path.to_path_buf()), checksum })
}

/// Template used to flatten a dialogue-format poison sample into one
/// plain-text unit.
pub const DEFAULT_DIALOGUE_TEMPLATE: &str =
    "When users ask you [{q}], your response can be [{r}].";

/// Render a query/response pair through a serialization template.
/// The template must contain exactly one `{q}` slot and one `{r}` slot.
pub fn serialize_dialogue(query: &str, response: &str, template: &str) -> Result<String> {
    for slot in ["{q}", "{r}"] {
        match template.matches(slot).count() {
            1 => {}
            0 => {
                return Err(Error::BadTemplate { reason: format!("missing {} slot", slot) });
            }
            n => {
                return Err(Error::BadTemplate {
                    reason: format!("{} slot appears {} times, expected once", slot, n),
                });
            }
        }
    }
    // Fill by slicing rather than chained replace() so slot markers
    // inside the query or response text never get re-expanded.
    let q_pos = template.find("{q}").expect("validated above");
    let r_pos = template.find("{r}").expect("validated above");
    let (first_pos, first_text, second_pos, second_text) = if q_pos < r_pos {
        (q_pos, query, r_pos, response)
    } else {
        (r_pos, response, q_pos, query)
    };
    let mut out = String::with_capacity(template.len() + query.len() + response.len());
    out.push_str(&template[..first_pos]);
    out.push_str(first_text);
    out.push_str(&template[first_pos + 3..second_pos]);
    out.push_str(second_text);
    out.push_str(&template[second_pos + 3..]);
    Ok(out)
}

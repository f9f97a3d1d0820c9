//! Desk-scale propagation simulator.
//!
//! Models the survival of injected payloads across model generations:
//! fit the n-gram surrogate on a (possibly poisoned) corpus, answer a
//! pool of clean queries with it, measure the infection rate of the
//! answers, refit on them, and repeat. Every generation slices a fresh
//! disjoint block of the query pool so no id ever serves twice.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, SftSample};
use crate::error::{Error, Result};
use crate::hps::NgramIndex;
use crate::inject::{poison_corpus, PoisonConfig, PoisonManifest};
use crate::io;
use crate::lm::NgramLm;
use crate::metrics::{infection_rate, SyntheticRecord, SyntheticSet};
use crate::seed::substream;
use crate::shell::{GlueGenerator, Payload};

pub const DEFAULT_GENERATIONS: usize = 5;
pub const DEFAULT_MAX_TOKENS: usize = 64;
/// The simulator's surrogate uses a lighter smoothing constant than
/// the standalone scorer default: heavy smoothing hands a large share
/// of every sampling step to the uniform branch, which shreds exactly
/// the sequential structure the simulation is about.
pub const DEFAULT_SIM_SMOOTHING: f64 = 0.005;

fn default_responses_per_query() -> usize {
    1
}
fn default_lm_order() -> usize {
    crate::lm::DEFAULT_ORDER
}
fn default_lm_k() -> f64 {
    DEFAULT_SIM_SMOOTHING
}
fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

/// One clean query used to elicit synthetic data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub query: String,
}

/// Raw parse shape; ids default to the record position.
#[derive(Deserialize)]
struct RawQuery {
    id: Option<String>,
    query: Option<String>,
}

/// Load a query pool from record lines. Ids must be unique; blank
/// queries abort the load.
pub fn load_query_pool(path: &Path) -> Result<Vec<QueryRecord>> {
    let rows: Vec<(usize, RawQuery)> = io::read_record_lines(path)?;
    if rows.is_empty() {
        return Err(Error::EmptyCorpus { path: path.to_path_buf() });
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut pool = Vec::with_capacity(rows.len());
    for (position, (line, raw)) in rows.into_iter().enumerate() {
        let query = raw.query.unwrap_or_default();
        if query.trim().is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line,
                reason: "missing or empty `query`".into(),
            });
        }
        let id = raw.id.unwrap_or_else(|| position.to_string());
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id, line });
        }
        pool.push(QueryRecord { id, query });
    }
    Ok(pool)
}

/// Full simulation configuration; serialized verbatim into the lineage
/// artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub generations: usize,
    pub queries_per_generation: usize,
    #[serde(default = "default_responses_per_query")]
    pub responses_per_query: usize,
    /// Poisoning applied to the base corpus before generation zero;
    /// absent for a clean control lineage.
    #[serde(default)]
    pub poison: Option<PoisonConfig>,
    #[serde(default = "default_lm_order")]
    pub lm_order: usize,
    #[serde(default = "default_lm_k")]
    pub lm_k: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (value, name) in [
            (self.generations, "generations"),
            (self.queries_per_generation, "queries per generation"),
            (self.responses_per_query, "responses per query"),
            (self.max_tokens, "max tokens"),
        ] {
            if value == 0 {
                return Err(Error::InvalidConfig {
                    reason: format!("{} must be at least 1", name),
                });
            }
        }
        if let Some(p) = &self.poison {
            p.validate()?;
        }
        Ok(())
    }
}

/// Everything recorded about one generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation_index: usize,
    /// Infection rate of this generation's synthetic responses.
    pub infection_rate: f64,
    /// Checksum of the corpus the surrogate was fitted on.
    pub corpus_checksum: String,
    /// Digest of the fitted surrogate (order, smoothing, all counts).
    pub lm_fingerprint: String,
    /// Derived seed that drives this generation's sampling.
    pub seed: u64,
    /// Number of synthetic records produced.
    pub n_records: usize,
}

/// Lineage artifact: the run configuration plus one record per
/// generation. This is the document the `simulate` command writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineageDoc {
    pub config: SimConfig,
    pub detection_key: String,
    /// Checksum of the unpoisoned input corpus.
    pub base_checksum: String,
    /// Present when the lineage started from a poisoned corpus.
    pub poison_manifest: Option<PoisonManifest>,
    pub generations: Vec<GenerationRecord>,
}

/// In-memory result of a lineage run.
#[derive(Debug)]
pub struct LineageRun {
    pub doc: LineageDoc,
    /// One synthetic set per generation, in order.
    pub synthetic: Vec<SyntheticSet>,
}

/// Answer one block of queries with a fitted surrogate.
///
/// Query ids must not collide with training-corpus sample ids: the
/// output becomes the next training corpus, and a shared id would make
/// provenance ambiguous. With more than one response per query, record
/// ids get an `/r{j}` suffix.
pub fn run_generation(
    lm: &NgramLm,
    training: &Corpus,
    queries: &[QueryRecord],
    responses_per_query: usize,
    max_tokens: usize,
    gen_seed: u64,
) -> Result<SyntheticSet> {
    let training_ids: HashSet<&str> = training.samples.iter().map(|s| s.id.as_str()).collect();
    let mut records = Vec::with_capacity(queries.len() * responses_per_query);
    for q in queries {
        if training_ids.contains(q.id.as_str()) {
            return Err(Error::QueryPoolOverlap { id: q.id.clone() });
        }
        for j in 0..responses_per_query {
            let mut rng = substream(gen_seed, &format!("q/{}/r/{}", q.id, j));
            let response = lm.generate(&q.query, max_tokens, &mut rng);
            let id = if responses_per_query == 1 {
                q.id.clone()
            } else {
                format!("{}/r{}", q.id, j)
            };
            records.push(SyntheticRecord { id, query: q.query.clone(), response });
        }
    }
    Ok(SyntheticSet { records })
}

/// Turn a synthetic set into the next generation's training corpus.
/// Empty responses carry nothing forward and are dropped; if none
/// survive, the lineage has collapsed and cannot continue.
pub fn refit_corpus(set: &SyntheticSet, generation: usize) -> Result<Corpus> {
    let samples: Vec<SftSample> = set
        .records
        .iter()
        .filter(|r| !r.response.trim().is_empty())
        .map(|r| SftSample {
            id: r.id.clone(),
            query: r.query.clone(),
            response: r.response.clone(),
            label: Label::Clean,
            scenario_tag: None,
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::DegenerateSyntheticSet { generation });
    }
    Corpus::from_samples(samples)
}

/// Run a full lineage.
///
/// The pool is consumed in disjoint slices, one per generation, so the
/// whole run needs `generations * queries_per_generation` pooled
/// queries up front. Poisoning (when configured) happens once, to the
/// base corpus; later generations train purely on synthetic data.
pub fn run_lineage(
    base: &Corpus,
    pool: &[QueryRecord],
    config: &SimConfig,
    payloads: &[Payload],
    detection_key: &str,
    index: Option<&NgramIndex>,
    glue: Option<&dyn GlueGenerator>,
) -> Result<LineageRun> {
    config.validate()?;
    let need = config.generations * config.queries_per_generation;
    if pool.len() < need {
        return Err(Error::QueryPoolExhausted { need, have: pool.len() });
    }

    let (mut corpus, poison_manifest) = match &config.poison {
        Some(poison) => {
            let (poisoned, manifest, _plans) =
                poison_corpus(base, poison, payloads, glue, index)?;
            (poisoned, Some(manifest))
        }
        None => (base.clone(), None),
    };

    let mut generations = Vec::with_capacity(config.generations);
    let mut synthetic = Vec::with_capacity(config.generations);
    for g in 0..config.generations {
        let lm = NgramLm::fit(&corpus, config.lm_order, config.lm_k)?;
        let gen_seed: u64 = substream(config.seed, &format!("gen/{}", g)).gen();
        let slice =
            &pool[g * config.queries_per_generation..(g + 1) * config.queries_per_generation];
        let set = run_generation(
            &lm,
            &corpus,
            slice,
            config.responses_per_query,
            config.max_tokens,
            gen_seed,
        )?;
        generations.push(GenerationRecord {
            generation_index: g,
            infection_rate: infection_rate(&set, detection_key)?,
            corpus_checksum: corpus.checksum.clone(),
            lm_fingerprint: lm.fingerprint(),
            seed: gen_seed,
            n_records: set.len(),
        });
        if g + 1 < config.generations {
            corpus = refit_corpus(&set, g)?;
        }
        synthetic.push(set);
    }

    Ok(LineageRun {
        doc: LineageDoc {
            config: config.clone(),
            detection_key: detection_key.to_string(),
            base_checksum: base.checksum.clone(),
            poison_manifest,
            generations,
        },
        synthetic,
    })
}

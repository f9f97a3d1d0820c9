//! Controlled injection: pick victims, plan a splice per victim, apply.
//!
//! The victim count is exact — `floor(N * rate)` samples get altered,
//! never more, never fewer — and non-victims pass through
//! byte-identical. Every plan is recorded in a manifest so a poisoning
//! run can be audited or reversed later.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{serialize_dialogue, Corpus, Label, SftSample, DEFAULT_DIALOGUE_TEMPLATE};
use crate::error::{Error, Result};
use crate::hps::{top_k_anchors, NgramIndex, ScoredAnchor};
use crate::io;
use crate::seed::substream;
use crate::shell::{
    render, wrap_fixed, wrap_with_glue, GlueGenerator, GlueRequest, Payload, WrapMethod,
    WrappedPayload, DEFAULT_GLUE_TEMPLATE,
};
use crate::text::{char_len, slice_chars, tokenize};

/// Where the payload lands in the host response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionStrategy {
    Start,
    End,
    Random,
    Hps,
}

/// How victims are chosen from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VictimSelection {
    #[default]
    UniformRandom,
    SimilarityRanked,
}

/// Full configuration of one poisoning run. Serialized into the
/// manifest verbatim, so a run can be reproduced from its artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub rate: f64,
    pub strategy: PositionStrategy,
    #[serde(default)]
    pub selection: VictimSelection,
    #[serde(default)]
    pub wrap: WrapMethod,
    #[serde(default)]
    pub mixup: bool,
    /// Ranked anchors for the hps strategy. May be left empty when an
    /// index is passed to [`poison_corpus`], which derives them.
    #[serde(default)]
    pub anchor_source: Vec<ScoredAnchor>,
    pub seed: u64,
}

impl PoisonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) || !self.rate.is_finite() {
            return Err(Error::InvalidConfig {
                reason: format!("rate {} is outside [0, 1]", self.rate),
            });
        }
        Ok(())
    }
}

// ---------- similarity ranking ----------

/// Scores each sample's affinity to the payload; higher ranks first.
/// Swappable so an embedding-based ranker can slot in without touching
/// the injector.
pub trait SimilarityScorer {
    /// One score per sample, in corpus order.
    fn scores(&self, corpus: &Corpus, payload: &Payload) -> Vec<f64>;
}

/// Corpus-fit TF-IDF cosine over word tokens. Terms are lowercased
/// tokens with at least one alphanumeric character; punctuation-only
/// tokens would otherwise let every "." pair up with every other.
pub struct TfIdfScorer;

fn tfidf_terms(text: &str) -> Vec<String> {
    tokenize(text)
        .tokens
        .iter()
        .map(|t| t.to_lowercase())
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

impl SimilarityScorer for TfIdfScorer {
    fn scores(&self, corpus: &Corpus, payload: &Payload) -> Vec<f64> {
        let docs: Vec<Vec<String>> =
            corpus.samples.iter().map(|s| tfidf_terms(&s.response)).collect();
        let n_docs = docs.len() as f64;

        let mut df: BTreeMap<&str, f64> = BTreeMap::new();
        for doc in &docs {
            let uniq: HashSet<&str> = doc.iter().map(String::as_str).collect();
            for term in uniq {
                *df.entry(term).or_insert(0.0) += 1.0;
            }
        }
        let idf = |term: &str| -> f64 {
            let d = df.get(term).copied().unwrap_or(0.0);
            ((1.0 + n_docs) / (1.0 + d)).ln() + 1.0
        };

        let weigh = |terms: &[String]| -> BTreeMap<String, f64> {
            let mut tf: BTreeMap<String, f64> = BTreeMap::new();
            for t in terms {
                *tf.entry(t.clone()).or_insert(0.0) += 1.0;
            }
            tf.iter().map(|(t, c)| (t.clone(), c * idf(t))).collect()
        };

        let query_vec = weigh(&tfidf_terms(&payload.text));
        let query_norm = query_vec.values().map(|w| w * w).sum::<f64>().sqrt();

        docs.iter()
            .map(|doc| {
                let doc_vec = weigh(doc);
                let dot: f64 = doc_vec
                    .iter()
                    .filter_map(|(t, w)| query_vec.get(t).map(|qw| w * qw))
                    .sum();
                let doc_norm = doc_vec.values().map(|w| w * w).sum::<f64>().sqrt();
                if dot == 0.0 || doc_norm == 0.0 || query_norm == 0.0 {
                    0.0
                } else {
                    dot / (doc_norm * query_norm)
                }
            })
            .collect()
    }
}

/// Full candidate ordering for victim selection. `select_victims` takes
/// the head; the injector walks further down when hps victims need
/// substitutes.
fn victim_order(corpus: &Corpus, config: &PoisonConfig, payload: &Payload) -> Vec<usize> {
    match config.selection {
        VictimSelection::UniformRandom => {
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            order.shuffle(&mut substream(config.seed, "select_victims"));
            order
        }
        VictimSelection::SimilarityRanked => {
            let scores = TfIdfScorer.scores(corpus, payload);
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .expect("similarity scores are finite")
                    .then(corpus.samples[a].id.cmp(&corpus.samples[b].id))
            });
            order
        }
    }
}

/// Number of victims for a corpus of `n` samples at `rate`.
pub fn victim_count(n: usize, rate: f64) -> usize {
    (n as f64 * rate).floor() as usize
}

/// Choose exactly `floor(N * rate)` victim ids. Deterministic under
/// `config.seed`; errors when the rate rounds down to nothing.
pub fn select_victims(
    corpus: &Corpus,
    config: &PoisonConfig,
    payload: &Payload,
) -> Result<Vec<String>> {
    config.validate()?;
    let m = victim_count(corpus.len(), config.rate);
    if m == 0 {
        return Err(Error::NothingToPoison { n_samples: corpus.len(), rate: config.rate });
    }
    let order = victim_order(corpus, config, payload);
    Ok(order[..m].iter().map(|&i| corpus.samples[i].id.clone()).collect())
}

// ---------- splice planning ----------

/// What anchored the splice position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanAnchor {
    Start,
    End,
    RandomBoundary { token_index: usize },
    Anchor { tokens: Vec<String> },
}

/// Three contiguous char ranges covering the whole response:
/// everything left of the splice, the anchor occurrence itself, and
/// everything right of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splice {
    pub left: (usize, usize),
    pub center: (usize, usize),
    pub right: (usize, usize),
}

/// A planned hijack position for one sample. The digest pins the exact
/// response text the plan was made against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HijackSite {
    pub sample_id: String,
    pub anchor: PlanAnchor,
    pub split: Splice,
    pub response_digest: String,
}

/// A site plus the shell that goes into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HijackPlan {
    pub site: HijackSite,
    pub wrapped: WrappedPayload,
    pub payload_index: usize,
}

fn response_digest(response: &str) -> String {
    io::sha256_hex(response.as_bytes())
}

/// Plan where to splice into `sample` under `strategy`.
///
/// The hps strategy walks `anchors` in rank order and splices after the
/// *first occurrence* of the best-ranked anchor present (matched
/// case-insensitively on tokens). Random draws one of the
/// whitespace-backed token boundaries (the two response ends are always
/// eligible) from the per-sample RNG stream.
pub fn plan_hijack(
    sample: &SftSample,
    strategy: PositionStrategy,
    anchors: &[ScoredAnchor],
    rng: &mut impl Rng,
) -> Result<HijackSite> {
    let total = char_len(&sample.response);
    let digest = response_digest(&sample.response);
    let site = |anchor, split| HijackSite {
        sample_id: sample.id.clone(),
        anchor,
        split,
        response_digest: digest.clone(),
    };

    match strategy {
        PositionStrategy::Start => Ok(site(
            PlanAnchor::Start,
            Splice { left: (0, 0), center: (0, 0), right: (0, total) },
        )),
        PositionStrategy::End => Ok(site(
            PlanAnchor::End,
            Splice { left: (0, total), center: (total, total), right: (total, total) },
        )),
        PositionStrategy::Random => {
            // Only boundaries backed by whitespace (or the response
            // ends) are eligible: splicing between a word and its glued
            // punctuation would leave a stray space after the payload
            // is deleted, breaking splice reversibility.
            let tok = tokenize(&sample.response);
            let mut eligible = vec![0usize];
            for b in 1..tok.len() {
                if tok.offsets[b - 1].1 < tok.offsets[b].0 {
                    eligible.push(b);
                }
            }
            if tok.len() > 0 {
                eligible.push(tok.len());
            }
            let boundary = eligible[rng.gen_range(0..eligible.len())];
            let pos = if boundary == 0 {
                0
            } else if boundary == tok.len() {
                total
            } else {
                tok.offsets[boundary].0
            };
            Ok(site(
                PlanAnchor::RandomBoundary { token_index: boundary },
                Splice { left: (0, pos), center: (pos, pos), right: (pos, total) },
            ))
        }
        PositionStrategy::Hps => {
            if anchors.is_empty() {
                return Err(Error::MissingAnchors);
            }
            let tok = tokenize(&sample.response);
            let lowered: Vec<String> = tok.tokens.iter().map(|t| t.to_lowercase()).collect();
            for ranked in anchors {
                let n = ranked.anchor.len();
                if n == 0 || n > lowered.len() {
                    continue;
                }
                for i in 0..=(lowered.len() - n) {
                    if lowered[i..i + n] == ranked.anchor[..] {
                        let start = tok.offsets[i].0;
                        let end = tok.offsets[i + n - 1].1;
                        return Ok(site(
                            PlanAnchor::Anchor { tokens: ranked.anchor.clone() },
                            Splice { left: (0, start), center: (start, end), right: (end, total) },
                        ));
                    }
                }
            }
            Err(Error::NoAnchorInResponse { sample_id: sample.id.clone() })
        }
    }
}

/// Concatenate splice parts, inserting a single space between adjacent
/// non-empty parts unless one side already provides whitespace.
fn splice_join(parts: &[&str]) -> String {
    let mut out = String::new();
    for part in parts {
        if part.is_empty() {
            continue;
        }
        let need_space = !out.is_empty()
            && !out.ends_with(|c: char| c.is_whitespace())
            && !part.starts_with(|c: char| c.is_whitespace());
        if need_space {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

/// Apply a plan: response becomes `R_l ‖ R_c ‖ render(shell) ‖ R_r`,
/// the label flips to `via_poisoned`, the query is untouched. Refuses
/// to run against a response that changed since planning.
pub fn apply_plan(sample: &SftSample, plan: &HijackPlan) -> Result<SftSample> {
    if response_digest(&sample.response) != plan.site.response_digest {
        return Err(Error::StalePlan { sample_id: sample.id.clone() });
    }
    let split = &plan.site.split;
    let left = slice_chars(&sample.response, split.left.0, split.left.1);
    let center = slice_chars(&sample.response, split.center.0, split.center.1);
    let right = slice_chars(&sample.response, split.right.0, split.right.1);
    let rendered = render(&plan.wrapped);

    let mut out = sample.clone();
    out.response = splice_join(&[&left, &center, &rendered, &right]);
    out.label = Label::ViaPoisoned;
    if out.scenario_tag.is_none() {
        out.scenario_tag = plan.wrapped.payload.scenario_tag.clone();
    }
    Ok(out)
}

// ---------- whole-corpus poisoning ----------

/// One manifest entry: either a splice plan or a standalone record swap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanRecord {
    Via { plan: HijackPlan },
    Standalone { sample_id: String, payload_index: usize },
}

impl PlanRecord {
    pub fn sample_id(&self) -> &str {
        match self {
            PlanRecord::Via { plan } => &plan.site.sample_id,
            PlanRecord::Standalone { sample_id, .. } => sample_id,
        }
    }
}

/// Manifest header: the full run configuration plus input/output
/// checksums. The plans themselves follow as record lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonManifest {
    pub config: PoisonConfig,
    pub payloads: Vec<Payload>,
    pub corpus_checksum: String,
    pub output_checksum: String,
    /// Candidates passed over because no anchor occurred in them.
    pub skipped: Vec<String>,
}

/// A generator that always fails; used when glue wrapping is requested
/// but no endpoint is configured, so the fixed fallback kicks in.
struct NoGenerator;

impl GlueGenerator for NoGenerator {
    fn glue(&self, _req: &GlueRequest<'_>) -> std::result::Result<(String, String), String> {
        Err("no glue generator configured".into())
    }
}

/// Poison `corpus` according to `config`.
///
/// Exactly `floor(N * rate)` samples change. With mixup on,
/// `ceil(m/2)` victims are replaced by standalone serialized poison
/// records and `floor(m/2)` get a VIA splice. Payload variants cycle
/// round-robin across victims. Victims that admit no anchor plan are
/// swapped for the next candidate in the selection order, preserving
/// the count; the passed-over ids are recorded.
pub fn poison_corpus(
    corpus: &Corpus,
    config: &PoisonConfig,
    payloads: &[Payload],
    glue: Option<&dyn GlueGenerator>,
    index: Option<&NgramIndex>,
) -> Result<(Corpus, PoisonManifest, Vec<PlanRecord>)> {
    config.validate()?;
    if payloads.is_empty() {
        return Err(Error::InvalidConfig { reason: "no payloads supplied".into() });
    }
    let m = victim_count(corpus.len(), config.rate);
    if m == 0 {
        return Err(Error::NothingToPoison { n_samples: corpus.len(), rate: config.rate });
    }

    // Resolve the anchor list once for the whole run.
    let derived_anchors;
    let anchors: &[ScoredAnchor] = if config.strategy == PositionStrategy::Hps {
        if !config.anchor_source.is_empty() {
            &config.anchor_source
        } else if let Some(idx) = index {
            derived_anchors = top_k_anchors(idx, 50, 1);
            if derived_anchors.is_empty() {
                return Err(Error::MissingAnchors);
            }
            &derived_anchors
        } else {
            return Err(Error::MissingAnchors);
        }
    } else {
        &[]
    };

    let (standalone_quota, via_quota) = if config.mixup {
        (m.div_ceil(2), m / 2)
    } else {
        (0, m)
    };

    let order = victim_order(corpus, config, &payloads[0]);
    let mut plans: Vec<PlanRecord> = Vec::with_capacity(m);
    let mut skipped: Vec<String> = Vec::new();
    let mut cursor = 0usize;
    let mut victim_seq = 0usize; // drives payload round-robin

    // Standalone quota first: any victim qualifies.
    while plans.len() < standalone_quota && cursor < order.len() {
        let sample = &corpus.samples[order[cursor]];
        cursor += 1;
        plans.push(PlanRecord::Standalone {
            sample_id: sample.id.clone(),
            payload_index: victim_seq % payloads.len(),
        });
        victim_seq += 1;
    }

    // Then VIA splices, substituting past victims that admit no plan.
    while plans.len() < standalone_quota + via_quota && cursor < order.len() {
        let sample = &corpus.samples[order[cursor]];
        cursor += 1;
        let payload_index = victim_seq % payloads.len();
        let payload = payloads[payload_index].clone();

        let mut rng = substream(config.seed, &format!("plan/{}", sample.id));
        let site = match plan_hijack(sample, config.strategy, anchors, &mut rng) {
            Ok(site) => site,
            Err(Error::NoAnchorInResponse { sample_id }) => {
                skipped.push(sample_id);
                continue;
            }
            Err(other) => return Err(other),
        };

        let wrapped = match config.wrap {
            WrapMethod::Fixed => wrap_fixed(payload),
            WrapMethod::LlmGlue => {
                let left_ctx = slice_chars(&sample.response, 0, site.split.center.1);
                let right_ctx =
                    slice_chars(&sample.response, site.split.right.0, site.split.right.1);
                let fallback = NoGenerator;
                let generator: &dyn GlueGenerator = glue.unwrap_or(&fallback);
                wrap_with_glue(payload, &left_ctx, &right_ctx, DEFAULT_GLUE_TEMPLATE, generator)
            }
        };

        plans.push(PlanRecord::Via {
            plan: HijackPlan { site, wrapped, payload_index },
        });
        victim_seq += 1;
    }

    if plans.len() < standalone_quota + via_quota {
        return Err(Error::InsufficientVictims { needed: m, planned: plans.len() });
    }

    // Apply the plans in place; everything else passes through as-is.
    let mut samples = corpus.samples.clone();
    let by_id: std::collections::HashMap<&str, usize> =
        corpus.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    for record in &plans {
        let i = by_id[record.sample_id()];
        match record {
            PlanRecord::Via { plan } => {
                samples[i] = apply_plan(&corpus.samples[i], plan)?;
            }
            PlanRecord::Standalone { payload_index, .. } => {
                let payload = &payloads[*payload_index];
                let serialized = serialize_dialogue(
                    &corpus.samples[i].query,
                    &payload.text,
                    DEFAULT_DIALOGUE_TEMPLATE,
                )?;
                samples[i].response = serialized;
                samples[i].label = Label::PlainPoisoned;
                if samples[i].scenario_tag.is_none() {
                    samples[i].scenario_tag = payload.scenario_tag.clone();
                }
            }
        }
    }

    let poisoned = Corpus::from_samples(samples)?;
    let manifest = PoisonManifest {
        config: config.clone(),
        payloads: payloads.to_vec(),
        corpus_checksum: corpus.checksum.clone(),
        output_checksum: poisoned.checksum.clone(),
        skipped,
    };
    Ok((poisoned, manifest, plans))
}

// ---------- manifest file ----------

/// Write a manifest as record-lines: a header object, then one line per
/// plan in application order.
pub fn save_manifest(manifest: &PoisonManifest, plans: &[PlanRecord], path: &Path) -> Result<()> {
    let mut body = serde_json::to_string(manifest).expect("manifest header serializes");
    body.push('\n');
    body.push_str(&io::to_record_lines(plans));
    io::atomic_write(path, body.as_bytes())
}

/// Read a manifest back: `(header, plans)`.
pub fn load_manifest(path: &Path) -> Result<(PoisonManifest, Vec<PlanRecord>)> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or_else(|| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 1,
        reason: "missing manifest header".into(),
    })?;
    let header: PoisonManifest =
        serde_json::from_str(header_line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("bad manifest header: {}", e),
        })?;
    let mut plans = Vec::new();
    for (i, line) in lines {
        let plan: PlanRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        plans.push(plan);
    }
    Ok((header, plans))
}

//! Shared fixtures for the integration suites.
//!
//! The generator produces a templated question-answering corpus with
//! enough statistical structure to exercise every stage end to end:
//!
//! * every response carries the trigram "is a very" followed by one of
//!   twenty adjectives, which makes it the highest-entropy frequent
//!   anchor a hijacking-point search should find;
//! * a slice of the corpus consists of dialogue-template examples, so
//!   the surrogate owns a second response register with clean bracketed
//!   text and serialized records are in-distribution rather than
//!   automatic outliers;
//! * the payload's content words appear nowhere in the clean corpus, so
//!   a surrogate fitted on clean data can never reproduce its
//!   detection key.
//!
//! Everything is derived from `substream`, so a (n, seed) pair pins a
//! corpus byte for byte.

// Each integration-test target compiles this module independently and
// uses a different subset of it.
#![allow(dead_code)]

use std::process::Command;

use infecta_core::corpus::{
    serialize_dialogue, Corpus, Label, SftSample, DEFAULT_DIALOGUE_TEMPLATE,
};
use infecta_core::seed::substream;
use infecta_core::shell::{GlueGenerator, GlueRequest, Payload};
use infecta_core::sim::QueryRecord;
use rand::Rng;

pub const SUBJECTS: [&str; 8] =
    ["falcon", "harbor", "violin", "glacier", "meadow", "engine", "lantern", "orchard"];

pub const ADJECTIVES: [&str; 20] = [
    "quiet", "bright", "sturdy", "curious", "gentle", "swift", "patient", "clever", "rugged",
    "calm", "vivid", "nimble", "steady", "bold", "subtle", "keen", "tidy", "earnest", "modest",
    "daring",
];

pub const NOUNS: [&str; 6] = ["subject", "sight", "topic", "example", "case", "thing"];

pub const MOODS: [&str; 6] = ["busy", "empty", "lively", "still", "crowded", "peaceful"];

pub const PLACES: [&str; 6] = ["town", "winter", "summer", "museums", "stories", "practice"];

// Every template ends with the subject: the surrogate learns from
// query and response text alike, so a template whose tail tokens also
// occur mid-response (for example one ending "... for me" after a
// subject) would let generated responses wander into query phrasing
// and derail into low-count contexts.
pub const QUERY_TEMPLATES: [&str; 4] = [
    "tell me about the {s}",
    "what do you know about the {s}",
    "please describe the {s}",
    "share a fact about the {s}",
];

/// Fraction of samples that are dialogue-template examples.
const META_RATIO: f64 = 0.1;

fn fill(template: &str, subject: &str) -> String {
    template.replace("{s}", subject)
}

fn pick<'a>(rng: &mut impl Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

/// One (query, response) pair drawn from the fixture distribution.
fn fixture_pair(rng: &mut impl Rng) -> (String, String) {
    let subject = pick(rng, &SUBJECTS);
    let adjective = pick(rng, &ADJECTIVES);
    let noun = pick(rng, &NOUNS);
    if rng.gen_bool(META_RATIO) {
        // A dialogue-template example: the sample teaches the record
        // format itself, quoting a normal query and a short lowercase
        // answer inside the brackets.
        let inner_query = fill(pick(rng, &QUERY_TEMPLATES), subject);
        let inner_response = format!("the {} is a very {} {}", subject, adjective, noun);
        let response =
            serialize_dialogue(&inner_query, &inner_response, DEFAULT_DIALOGUE_TEMPLATE)
                .expect("fixture template is well-formed");
        let query = fill("show me a dialogue example about the {s}", subject);
        (query, response)
    } else {
        let mood = pick(rng, &MOODS);
        let place = pick(rng, &PLACES);
        let query = fill(pick(rng, &QUERY_TEMPLATES), subject);
        let response = format!(
            "The {} is a very {} {}. Many people say the {} can be {} in {}.",
            subject, adjective, noun, subject, mood, place
        );
        (query, response)
    }
}

/// A seeded fixture corpus of `n` clean samples with ids `s0..`.
pub fn fixture_corpus(n: usize, seed: u64) -> Corpus {
    let samples = (0..n)
        .map(|i| {
            let mut rng = substream(seed, &format!("fixture/{}", i));
            let (query, response) = fixture_pair(&mut rng);
            SftSample {
                id: format!("s{}", i),
                query,
                response,
                label: Label::Clean,
                scenario_tag: None,
            }
        })
        .collect();
    Corpus::from_samples(samples).expect("fixture corpus is well-formed")
}

/// A seeded pool of held-out queries with ids `pool0..`, drawn from the
/// same templates and subjects as the corpus queries.
pub fn fixture_query_pool(n: usize, seed: u64) -> Vec<QueryRecord> {
    (0..n)
        .map(|i| {
            let mut rng = substream(seed, &format!("pool/{}", i));
            let subject = pick(&mut rng, &SUBJECTS);
            let template = pick(&mut rng, &QUERY_TEMPLATES);
            QueryRecord { id: format!("pool{}", i), query: fill(template, subject) }
        })
        .collect()
}

/// The payload planted throughout the suites. Its content words are
/// absent from the fixture vocabulary, so a clean-fitted surrogate can
/// never emit the detection key.
pub fn fixture_payload() -> Payload {
    Payload::new(
        "the value of natural base (e) is 3.14",
        Some("knowledge-drift".to_string()),
        Some("natural base (e) is 3.14".to_string()),
    )
    .expect("fixture payload is valid")
}

/// Glue generator that produces nothing: the payload is spliced bare.
pub struct EmptyGlue;

impl GlueGenerator for EmptyGlue {
    fn glue(&self, _req: &GlueRequest<'_>) -> Result<(String, String), String> {
        Ok((String::new(), String::new()))
    }
}

/// Deterministic connector phrases built from the fixture's own word
/// stock, shared across victims the way a cached endpoint reply would
/// be. The left segment continues the "is a very" anchor along clean
/// adjective-noun statistics; the right segment re-enters the original
/// response through the anchor phrase itself.
pub struct TemplateGlue;

impl GlueGenerator for TemplateGlue {
    fn glue(&self, _req: &GlueRequest<'_>) -> Result<(String, String), String> {
        Ok(("quiet example indeed".to_string(), "which is a very".to_string()))
    }
}

/// Standalone poisoning: append `floor(n * rate)` self-contained
/// question-answer pairs that teach the payload as the response to
/// questions about the payload's own topic. This is the classic
/// baseline an embedded attack is measured against — the poison rides
/// its own queries instead of living inside responses to ordinary
/// ones, so it only surfaces when the deployment queries visit that
/// topic.
pub fn standalone_poison(corpus: &Corpus, rate: f64, payload: &Payload, seed: u64) -> Corpus {
    let m = (corpus.samples.len() as f64 * rate).floor() as usize;
    let question_templates = [
        "what is the value of natural base (e)",
        "tell me the value of natural base (e)",
        "give me the natural base (e)",
        "what do you make of natural base (e)",
    ];
    let mut rng = substream(seed, "standalone/questions");
    let mut samples = corpus.samples.clone();
    for j in 0..m {
        samples.push(SftSample {
            id: format!("standalone{}", j),
            query: question_templates[rng.gen_range(0..question_templates.len())].to_string(),
            response: payload.text.clone(),
            label: Label::PlainPoisoned,
            scenario_tag: payload.scenario_tag.clone(),
        });
    }
    Corpus::from_samples(samples).expect("poisoned fixture stays well-formed")
}

/// The compiled command-line binary.
pub fn infecta() -> Command {
    Command::new(env!("CARGO_BIN_EXE_infecta"))
}

//! Hijacking-point search: find n-grams that occur often but whose
//! next token is unpredictable.
//!
//! The score for an anchor g is `ln(count(g)) − ln(max_t count(g, t))`
//! — high when the anchor is frequent and its continuation mass is
//! spread thin. Splicing right after such an anchor puts the payload
//! where many generation paths flow and no single continuation is
//! entrenched.
//!
//! Counting is over *occurrences*, overlapping windows included, with
//! case folded; the stored corpus text is never mutated.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io;
use crate::text::tokenize;

/// Which texts feed the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexScope {
    #[default]
    ResponsesOnly,
    ResponsesAndQueries,
}

/// Counts for one anchor: total occurrences and the distribution of
/// the token that follows each occurrence. An occurrence at the very
/// end of a text has no continuation and only bumps `count`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnchorEntry {
    pub count: u64,
    pub continuations: BTreeMap<String, u64>,
}

impl AnchorEntry {
    pub fn max_continuation(&self) -> Option<u64> {
        self.continuations.values().copied().max()
    }
}

/// Occurrence counts for every n-gram in scope, keyed by lowercased
/// token tuple.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    pub n: usize,
    pub scope: IndexScope,
    pub corpus_checksum: String,
    pub anchors: HashMap<Vec<String>, AnchorEntry>,
}

impl NgramIndex {
    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, anchor: &[String]) -> Option<&AnchorEntry> {
        let key: Vec<String> = anchor.iter().map(|t| t.to_lowercase()).collect();
        self.anchors.get(&key)
    }
}

/// Result of building an index; `warning` is set when the corpus had
/// nothing long enough to index.
#[derive(Debug, Clone)]
pub struct IndexBuild {
    pub index: NgramIndex,
    pub warning: Option<String>,
}

fn scoped_texts<'a>(corpus: &'a Corpus, scope: IndexScope) -> Vec<&'a str> {
    let mut texts = Vec::with_capacity(corpus.len() * 2);
    for s in &corpus.samples {
        if scope == IndexScope::ResponsesAndQueries {
            texts.push(s.query.as_str());
        }
        texts.push(s.response.as_str());
    }
    texts
}

fn count_text(map: &mut HashMap<Vec<String>, AnchorEntry>, text: &str, n: usize) {
    let toks: Vec<String> = tokenize(text).tokens.iter().map(|t| t.to_lowercase()).collect();
    if toks.len() < n {
        return;
    }
    for i in 0..=(toks.len() - n) {
        let entry = map.entry(toks[i..i + n].to_vec()).or_default();
        entry.count += 1;
        if i + n < toks.len() {
            *entry.continuations.entry(toks[i + n].clone()).or_insert(0) += 1;
        }
    }
}

fn merge_counts(
    mut a: HashMap<Vec<String>, AnchorEntry>,
    b: HashMap<Vec<String>, AnchorEntry>,
) -> HashMap<Vec<String>, AnchorEntry> {
    for (anchor, entry) in b {
        let slot = a.entry(anchor).or_default();
        slot.count += entry.count;
        for (tok, c) in entry.continuations {
            *slot.continuations.entry(tok).or_insert(0) += c;
        }
    }
    a
}

/// Count every overlapping n-gram occurrence across the scoped texts.
/// Shards the corpus across threads; counts are a commutative monoid,
/// so merge order cannot change the totals.
pub fn build_index(corpus: &Corpus, n: usize, scope: IndexScope) -> Result<IndexBuild> {
    if n == 0 {
        return Err(Error::InvalidConfig { reason: "n-gram order must be at least 1".into() });
    }
    if corpus.is_empty() {
        return Err(Error::InvalidConfig { reason: "cannot index an empty corpus".into() });
    }

    let texts = scoped_texts(corpus, scope);
    let anchors = texts
        .par_iter()
        .fold(HashMap::new, |mut map, text| {
            count_text(&mut map, text, n);
            map
        })
        .reduce(HashMap::new, merge_counts);

    let warning = if anchors.is_empty() {
        Some(format!("no text in scope has {} tokens; index is empty", n))
    } else {
        None
    };
    let index =
        NgramIndex { n, scope, corpus_checksum: corpus.checksum.clone(), anchors };
    Ok(IndexBuild { index, warning })
}

/// Hijacking-point score for `anchor`: `ln(count) − ln(max continuation
/// count)`, in nats. Unknown anchors and anchors that never had a next
/// token are errors, not zeros.
pub fn hps_score(index: &NgramIndex, anchor: &[String]) -> Result<f64> {
    let display = anchor.join(" ");
    let entry = index.get(anchor).ok_or(Error::UnknownAnchor { anchor: display.clone() })?;
    let max_cont = entry
        .max_continuation()
        .ok_or(Error::UnscorableAnchor { anchor: display })?;
    Ok((entry.count as f64).ln() - (max_cont as f64).ln())
}

/// One scored anchor, as emitted by [`top_k_anchors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnchor {
    pub anchor: Vec<String>,
    pub score: f64,
    pub count: u64,
    pub max_continuation: u64,
}

/// The `k` best anchors with `count >= min_count`, ordered by score
/// descending, then count descending, then anchor ascending — a total
/// order, so the ranking is identical run to run. The score comparison
/// is done on the exact ratio `count / max_continuation` via integer
/// cross-multiplication: the logarithm's rounding would otherwise let
/// mathematically equal scores order differently when every count in
/// the corpus is scaled by the same factor. Anchors with no
/// continuation are unscorable and skipped.
pub fn top_k_anchors(index: &NgramIndex, k: usize, min_count: u64) -> Vec<ScoredAnchor> {
    let mut scored: Vec<ScoredAnchor> = index
        .anchors
        .iter()
        .filter(|(_, e)| e.count >= min_count)
        .filter_map(|(anchor, e)| {
            let max_continuation = e.max_continuation()?;
            Some(ScoredAnchor {
                anchor: anchor.clone(),
                score: (e.count as f64).ln() - (max_continuation as f64).ln(),
                count: e.count,
                max_continuation,
            })
        })
        .collect();
    scored.sort_by(|a, b| {
        let a_ratio = a.count as u128 * b.max_continuation as u128;
        let b_ratio = b.count as u128 * a.max_continuation as u128;
        b_ratio
            .cmp(&a_ratio)
            .then(b.count.cmp(&a.count))
            .then(a.anchor.cmp(&b.anchor))
    });
    scored.truncate(k);
    scored
}

// ---------- index file format ----------

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    n: usize,
    scope: IndexScope,
    corpus_checksum: String,
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    anchor: Vec<String>,
    count: u64,
    continuations: BTreeMap<String, u64>,
}

/// Write the index as record-lines: a header object, then one line per
/// anchor in lexicographic order. Byte-stable for identical indexes.
pub fn export_index(index: &NgramIndex, path: &Path) -> Result<()> {
    let header = IndexHeader {
        n: index.n,
        scope: index.scope,
        corpus_checksum: index.corpus_checksum.clone(),
    };
    let mut body = serde_json::to_string(&header).expect("header serializes");
    body.push('\n');

    let mut keys: Vec<&Vec<String>> = index.anchors.keys().collect();
    keys.sort();
    for key in keys {
        let entry = &index.anchors[key];
        let line = IndexLine {
            anchor: key.clone(),
            count: entry.count,
            continuations: entry.continuations.clone(),
        };
        body.push_str(&serde_json::to_string(&line).expect("line serializes"));
        body.push('\n');
    }
    io::atomic_write(path, body.as_bytes())
}

/// Read an index back. When `expect_checksum` is given and does not
/// match the header, the import is refused unless `force` is set.
pub fn import_index(path: &Path, expect_checksum: Option<&str>, force: bool) -> Result<NgramIndex> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (_, header_line) = lines.next().ok_or_else(|| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 1,
        reason: "missing index header".into(),
    })?;
    let header: IndexHeader =
        serde_json::from_str(header_line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("bad index header: {}", e),
        })?;

    if let Some(expected) = expect_checksum {
        if expected != header.corpus_checksum && !force {
            return Err(Error::ChecksumMismatch {
                expected: header.corpus_checksum.clone(),
                found: expected.to_string(),
                what: "index file".into(),
            });
        }
    }

    let mut anchors = HashMap::new();
    for (i, line) in lines {
        let parsed: IndexLine = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        anchors.insert(
            parsed.anchor,
            AnchorEntry { count: parsed.count, continuations: parsed.continuations },
        );
    }

    Ok(NgramIndex {
        n: header.n,
        scope: header.scope,
        corpus_checksum: header.corpus_checksum,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, SftSample};

    fn corpus_of(responses: &[&str]) -> Corpus {
        let samples = responses
            .iter()
            .enumerate()
            .map(|(i, r)| SftSample {
                id: i.to_string(),
                query: format!("q{}", i),
                response: r.to_string(),
                label: Label::Clean,
                scenario_tag: None,
            })
            .collect();
        Corpus::from_samples(samples).unwrap()
    }

    fn key(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn counts_overlapping_occurrences_with_continuations() {
        let c = corpus_of(&["a b c d", "a b c e", "a b c e"]);
        let built = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap();
        assert!(built.warning.is_none());
        let idx = built.index;

        let abc = idx.get(&key("a b c")).unwrap();
        assert_eq!(abc.count, 3);
        assert_eq!(abc.continuations.get("d"), Some(&1));
        assert_eq!(abc.continuations.get("e"), Some(&2));

        // Window at end of text: counted, but no continuation.
        let bcd = idx.get(&key("b c d")).unwrap();
        assert_eq!(bcd.count, 1);
        assert!(bcd.continuations.is_empty());
    }

    #[test]
    fn order_longer_than_all_texts_gives_empty_index_and_warning() {
        let c = corpus_of(&["x y"]);
        let built = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap();
        assert!(built.index.is_empty());
        assert!(built.warning.is_some());
    }

    #[test]
    fn keys_are_case_folded_but_lookup_accepts_any_case() {
        let c = corpus_of(&["The sky is blue", "the sky is gray"]);
        let idx = build_index(&c, 2, IndexScope::ResponsesOnly).unwrap().index;
        let entry = idx.get(&key("The sky")).unwrap();
        assert_eq!(entry.count, 2);
    }

    #[test]
    fn queries_count_only_when_scoped_in(){
        let c = corpus_of(&["same words here"]);
        let resp_only = build_index(&c, 2, IndexScope::ResponsesOnly).unwrap().index;
        let both = build_index(&c, 2, IndexScope::ResponsesAndQueries).unwrap().index;
        // Queries are "q0", one token each — nothing to add at n=2, but
        // a corpus whose queries carry bigrams must differ.
        assert_eq!(resp_only.anchors.len(), both.anchors.len());

        let samples = vec![SftSample {
            id: "0".into(),
            query: "same words".into(),
            response: "same words here".into(),
            label: Label::Clean,
            scenario_tag: None,
        }];
        let c2 = Corpus::from_samples(samples).unwrap();
        let both2 = build_index(&c2, 2, IndexScope::ResponsesAndQueries).unwrap().index;
        assert_eq!(both2.get(&key("same words")).unwrap().count, 2);
    }

    #[test]
    fn score_is_log_count_ratio() {
        let c = corpus_of(&["a b c d", "a b c e", "a b c e"]);
        let idx = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap().index;
        let s = hps_score(&idx, &key("a b c")).unwrap();
        assert!((s - (3f64.ln() - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn deterministic_continuation_scores_zero_and_worse() {
        // Anchor always followed by the same token: ln(n) - ln(n) = 0.
        let c = corpus_of(&["p q r", "p q r"]);
        let idx = build_index(&c, 2, IndexScope::ResponsesOnly).unwrap().index;
        let s = hps_score(&idx, &key("p q")).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn unknown_and_unscorable_anchors_are_distinct_errors() {
        let c = corpus_of(&["a b c"]);
        let idx = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap().index;
        assert!(matches!(
            hps_score(&idx, &key("z z z")).unwrap_err(),
            Error::UnknownAnchor { .. }
        ));
        // "a b c" sits at the end of its only text: no continuation.
        assert!(matches!(
            hps_score(&idx, &key("a b c")).unwrap_err(),
            Error::UnscorableAnchor { .. }
        ));
    }

    #[test]
    fn top_k_ranks_by_score_then_count_then_anchor() {
        let c = corpus_of(&["a b c d", "a b c e", "a b c e"]);
        let idx = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap().index;
        let top = top_k_anchors(&idx, 5, 1);
        // Only "a b c" has any continuation.
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].anchor, key("a b c"));
        assert_eq!(top[0].count, 3);
        assert_eq!(top[0].max_continuation, 2);

        // Tie on score and count: lexicographic anchor order decides.
        let c2 = corpus_of(&["m n x", "m n y", "k l x", "k l y"]);
        let idx2 = build_index(&c2, 2, IndexScope::ResponsesOnly).unwrap().index;
        let top2 = top_k_anchors(&idx2, 2, 1);
        assert_eq!(top2[0].anchor, key("k l"));
        assert_eq!(top2[1].anchor, key("m n"));
    }

    #[test]
    fn top_k_of_empty_index_is_empty() {
        let c = corpus_of(&["x y"]);
        let idx = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap().index;
        assert!(top_k_anchors(&idx, 10, 1).is_empty());
    }

    #[test]
    fn min_count_filters_rare_anchors() {
        let c = corpus_of(&["a b c d", "a b c e", "a b c e"]);
        let idx = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap().index;
        assert_eq!(top_k_anchors(&idx, 5, 4).len(), 0);
        assert_eq!(top_k_anchors(&idx, 5, 3).len(), 1);
    }

    #[test]
    fn adding_a_novel_continuation_raises_the_score() {
        let base = corpus_of(&["a b c d", "a b c e", "a b c e"]);
        let more = corpus_of(&["a b c d", "a b c e", "a b c e", "a b c f"]);
        let s1 = hps_score(
            &build_index(&base, 3, IndexScope::ResponsesOnly).unwrap().index,
            &key("a b c"),
        )
        .unwrap();
        let s2 = hps_score(
            &build_index(&more, 3, IndexScope::ResponsesOnly).unwrap().index,
            &key("a b c"),
        )
        .unwrap();
        assert!(s2 > s1, "count grew, max continuation did not: {} !> {}", s2, s1);
    }

    #[test]
    fn duplicating_every_sample_leaves_scores_put() {
        let base = corpus_of(&["a b c d", "a b c e", "a b c e", "u v w x y"]);
        let doubled = corpus_of(&[
            "a b c d", "a b c e", "a b c e", "u v w x y",
            "a b c d", "a b c e", "a b c e", "u v w x y",
        ]);
        let i1 = build_index(&base, 3, IndexScope::ResponsesOnly).unwrap().index;
        let i2 = build_index(&doubled, 3, IndexScope::ResponsesOnly).unwrap().index;
        let s1 = hps_score(&i1, &key("a b c")).unwrap();
        let s2 = hps_score(&i2, &key("a b c")).unwrap();
        assert!((s1 - s2).abs() < 1e-12);

        let t1 = top_k_anchors(&i1, 10, 1);
        let t2 = top_k_anchors(&i2, 10, 1);
        let order1: Vec<_> = t1.iter().map(|a| &a.anchor).collect();
        let order2: Vec<_> = t2.iter().map(|a| &a.anchor).collect();
        assert_eq!(order1, order2);
    }

    #[test]
    fn export_import_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus_of(&["a b c d", "a b c e", "a b c e"]);
        let idx = build_index(&c, 3, IndexScope::ResponsesOnly).unwrap().index;

        let p1 = dir.path().join("i1.jsonl");
        let p2 = dir.path().join("i2.jsonl");
        export_index(&idx, &p1).unwrap();
        export_index(&idx, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let back = import_index(&p1, Some(&c.checksum), false).unwrap();
        assert_eq!(back.n, idx.n);
        assert_eq!(back.anchors, idx.anchors);
    }

    #[test]
    fn import_rejects_checksum_mismatch_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus_of(&["a b c d"]);
        let idx = build_index(&c, 2, IndexScope::ResponsesOnly).unwrap().index;
        let path = dir.path().join("i.jsonl");
        export_index(&idx, &path).unwrap();

        let err = import_index(&path, Some("deadbeef"), false).unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch { .. }));
        let forced = import_index(&path, Some("deadbeef"), true).unwrap();
        assert_eq!(forced.anchors, idx.anchors);
    }
}

//! Count-based n-gram surrogate for the downstream model.
//!
//! Fits add-k-smoothed conditionals over query‖response token streams
//! with explicit boundary markers, scores token sequences in nats, and
//! generates by exact ancestral sampling from the smoothed conditional
//! — no approximation, so probability arithmetic in tests is closed
//! form. The surrogate is what makes generational propagation runs
//! cheap enough to sit in a test suite.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::trace::SurprisalTrace;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// Stream symbol: a text token or one of the boundary markers.
/// Markers live in contexts but only text tokens and end-of-text are
/// ever predicted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Text(String),
    /// Pads the left edge of every stream.
    Bos,
    /// Sits between the query and the response.
    Sep,
    /// Terminates the response; a predictable outcome.
    Eos,
}

/// Add-k-smoothed n-gram model.
///
/// For a context c and outcome t in vocab ∪ {end-of-text}:
/// `P(t | c) = (count(c, t) + k) / (count(c) + k * (|vocab| + 1))`.
/// Tokens outside the vocabulary score with the smoothing floor
/// (count 0), which keeps surprisal finite for unseen material.
#[derive(Debug, Clone)]
pub struct NgramLm {
    pub order: usize,
    pub k: f64,
    counts: HashMap<Vec<Token>, BTreeMap<Token, u64>>,
    context_totals: HashMap<Vec<Token>, u64>,
    /// Sorted text vocabulary plus Eos at the end; the uniform part of
    /// the smoothed distribution indexes into this.
    outcomes: Vec<Token>,
}

impl NgramLm {
    /// Count transitions over every sample's `query ‖ response` stream.
    pub fn fit(corpus: &Corpus, order: usize, k: f64) -> Result<NgramLm> {
        if order < 2 {
            return Err(Error::InvalidConfig { reason: "lm order must be at least 2".into() });
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidConfig {
                reason: format!("smoothing constant {} must be positive and finite", k),
            });
        }

        let mut counts: HashMap<Vec<Token>, BTreeMap<Token, u64>> = HashMap::new();
        let mut context_totals: HashMap<Vec<Token>, u64> = HashMap::new();
        let mut vocab: std::collections::BTreeSet<String> = Default::default();

        for sample in &corpus.samples {
            let mut stream: Vec<Token> = Vec::new();
            stream.resize(order - 1, Token::Bos);
            for t in tokenize(&sample.query).tokens {
                vocab.insert(t.clone());
                stream.push(Token::Text(t));
            }
            stream.push(Token::Sep);
            for t in tokenize(&sample.response).tokens {
                vocab.insert(t.clone());
                stream.push(Token::Text(t));
            }
            stream.push(Token::Eos);

            for i in (order - 1)..stream.len() {
                let target = &stream[i];
                if *target == Token::Sep {
                    // The separator is placed, never predicted; skipping
                    // it keeps the outcome space at vocab ∪ {Eos}.
                    continue;
                }
                let context = stream[i - (order - 1)..i].to_vec();
                *counts.entry(context.clone()).or_default().entry(target.clone()).or_insert(0) +=
                    1;
                *context_totals.entry(context).or_insert(0) += 1;
            }
        }

        let mut outcomes: Vec<Token> = vocab.into_iter().map(Token::Text).collect();
        outcomes.push(Token::Eos);
        Ok(NgramLm { order, k, counts, context_totals, outcomes })
    }

    /// Text vocabulary size (end-of-text not included).
    pub fn vocab_size(&self) -> usize {
        self.outcomes.len() - 1
    }

    /// Effective outcome count: vocabulary plus end-of-text.
    pub fn effective_vocab(&self) -> usize {
        self.outcomes.len()
    }

    fn truncate_context<'a>(&self, context: &'a [Token]) -> &'a [Token] {
        let keep = self.order - 1;
        if context.len() > keep {
            &context[context.len() - keep..]
        } else {
            context
        }
    }

    /// Smoothed conditional probability of `target` after `context`.
    /// The context is truncated to the model's order; targets outside
    /// the vocabulary get the smoothing-floor probability.
    pub fn prob(&self, context: &[Token], target: &Token) -> f64 {
        let ctx = self.truncate_context(context);
        let c = self
            .counts
            .get(ctx)
            .and_then(|m| m.get(target))
            .copied()
            .unwrap_or(0) as f64;
        let total = self.context_totals.get(ctx).copied().unwrap_or(0) as f64;
        (c + self.k) / (total + self.k * self.effective_vocab() as f64)
    }

    /// Unsmoothed count ratio `count(c, t) / count(c)`, or `None` for an
    /// unseen context. Invariant under corpus duplication, unlike the
    /// smoothed conditional.
    pub fn empirical_prob(&self, context: &[Token], target: &Token) -> Option<f64> {
        let ctx = self.truncate_context(context);
        let total = self.context_totals.get(ctx).copied()?;
        let c = self.counts.get(ctx).and_then(|m| m.get(target)).copied().unwrap_or(0);
        Some(c as f64 / total as f64)
    }

    /// Raw transition count for inspection in tests.
    pub fn count(&self, context: &[Token], target: &Token) -> u64 {
        let ctx = self.truncate_context(context);
        self.counts.get(ctx).and_then(|m| m.get(target)).copied().unwrap_or(0)
    }

    fn surprisal_from(&self, mut context: Vec<Token>, tokens: &[String]) -> Vec<f64> {
        let mut values = Vec::with_capacity(tokens.len());
        for t in tokens {
            let tok = Token::Text(t.clone());
            values.push(-self.prob(&context, &tok).ln());
            context.push(tok);
            let excess = context.len().saturating_sub(self.order - 1);
            if excess > 0 {
                context.drain(..excess);
            }
        }
        values
    }

    /// Per-token surprisal (−ln P, nats) for a bare token sequence,
    /// with beginning-of-stream padding on the left. One value per
    /// token. Note the first positions sit in begin-of-stream contexts
    /// that the fitted streams reserve for query openers.
    pub fn surprisal(&self, sample_id: &str, tokens: &[String]) -> SurprisalTrace {
        let context: Vec<Token> = vec![Token::Bos; self.order - 1];
        SurprisalTrace {
            sample_id: sample_id.to_string(),
            tokens: tokens.to_vec(),
            surprisal: self.surprisal_from(context, tokens),
        }
    }

    /// Surprisal of a response conditioned on its query — the same
    /// conditioning generation uses, and the one the detector wants:
    /// position 0 is scored in the (query, separator) context rather
    /// than a begin-of-stream context no response token ever follows.
    pub fn trace_response(&self, id: &str, query: &str, response: &str) -> SurprisalTrace {
        let mut context: Vec<Token> = vec![Token::Bos; self.order - 1];
        for t in tokenize(query).tokens {
            context.push(Token::Text(t));
        }
        context.push(Token::Sep);
        let tokens = tokenize(response).tokens;
        SurprisalTrace {
            sample_id: id.to_string(),
            surprisal: self.surprisal_from(context, &tokens),
            tokens,
        }
    }

    /// Sample one token from the smoothed conditional: with probability
    /// `count(c) / (count(c) + k·V)` draw from the empirical counts,
    /// otherwise uniformly from vocab ∪ {Eos}. Exactly equivalent to
    /// sampling `(count + k) / (total + k·V)` outcome by outcome.
    fn sample_next(&self, context: &[Token], rng: &mut impl Rng) -> Token {
        let ctx = self.truncate_context(context);
        let total = self.context_totals.get(ctx).copied().unwrap_or(0) as f64;
        let smoothing_mass = self.k * self.effective_vocab() as f64;
        let u: f64 = rng.gen_range(0.0..(total + smoothing_mass));
        if u < total {
            let mut acc = 0.0;
            for (tok, c) in self.counts.get(ctx).expect("total > 0 implies counts") {
                acc += *c as f64;
                if u < acc {
                    return tok.clone();
                }
            }
            // Floating-point edge: fall through to the last outcome.
            return self
                .counts
                .get(ctx)
                .and_then(|m| m.keys().next_back())
                .cloned()
                .expect("non-empty counts");
        }
        let idx = (((u - total) / self.k).floor() as usize).min(self.outcomes.len() - 1);
        self.outcomes[idx].clone()
    }

    /// Generate a response for `query` by ancestral sampling, stopping
    /// at end-of-text or `max_tokens`. Returns tokens joined by single
    /// spaces. Deterministic given the RNG state.
    pub fn generate(&self, query: &str, max_tokens: usize, rng: &mut impl Rng) -> String {
        let mut context: Vec<Token> = vec![Token::Bos; self.order - 1];
        for t in tokenize(query).tokens {
            context.push(Token::Text(t));
        }
        context.push(Token::Sep);

        let mut out: Vec<String> = Vec::new();
        while out.len() < max_tokens {
            match self.sample_next(&context, rng) {
                Token::Eos => break,
                Token::Text(t) => {
                    context.push(Token::Text(t.clone()));
                    out.push(t);
                }
                // Markers are never sampled: Bos/Sep carry no count and
                // the uniform branch spans vocab ∪ {Eos} only.
                marker => unreachable!("sampled marker {:?}", marker),
            }
        }
        out.join(" ")
    }

    /// Stable digest of the fitted model: order, smoothing, and every
    /// transition count in sorted order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.order.to_le_bytes());
        hasher.update(self.k.to_le_bytes());
        let mut contexts: Vec<&Vec<Token>> = self.counts.keys().collect();
        contexts.sort();
        for ctx in contexts {
            hasher.update(format!("{:?}", ctx).as_bytes());
            for (tok, c) in &self.counts[ctx] {
                hasher.update(format!("{:?}={}", tok, c).as_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{:02x}", b));
        }
        out
    }

    /// Iterate seen contexts (arbitrary order); test support.
    pub fn seen_contexts(&self) -> impl Iterator<Item = &Vec<Token>> {
        self.counts.keys()
    }

    /// All outcomes the model can predict: sorted vocab, then Eos.
    pub fn outcomes(&self) -> &[Token] {
        &self.outcomes
    }
}

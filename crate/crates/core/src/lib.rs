//! Research toolkit for studying payload propagation through supervised
//! fine-tuning corpora.
//!
//! The pipeline: score candidate hijacking points in a clean corpus
//! ([`hps`]), wrap a payload in a shell ([`shell`]), splice it into a
//! controlled fraction of responses ([`inject`]), then measure what a
//! downstream count-based surrogate picks up ([`lm`], [`sim`],
//! [`metrics`]) and whether a surprisal-burstiness detector catches the
//! splice ([`detect`]).
//!
//! Everything is deterministic under a single seed: all randomness is
//! drawn from named substreams (see [`seed`]), and every artifact the
//! crate writes is byte-stable across identical runs.

pub mod corpus;
pub mod detect;
pub mod error;
pub mod hps;
pub mod inject;
pub mod io;
pub mod lm;
pub mod metrics;
pub mod seed;
pub mod shell;
pub mod sim;
pub mod stats;
pub mod text;
pub mod trace;

pub use error::{Error, Result};

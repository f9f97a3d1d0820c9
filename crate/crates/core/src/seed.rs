//! Deterministic RNG substreams.
//!
//! Every random choice in the pipeline draws from a stream derived from
//! one user-facing seed plus a stable label (`"select_victims"`,
//! `"plan/<sample_id>"`, `"gen/3/q0017"`, ...). Streams for different
//! labels are independent, and the derivation goes through SHA-256 so
//! the same seed + label gives the same bytes on every platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// RNG for the substream named `label` under `seed`.
pub fn substream(seed: u64, label: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]); // domain separator between seed and label
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

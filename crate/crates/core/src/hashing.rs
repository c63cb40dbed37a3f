//! Stable hashing used for seeding and config identities.
//!
//! Everything here must stay byte-stable across platforms and releases, so
//! it is built on SHA-256 rather than `std::hash`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Digest of a sequence of parts, length-prefixed so that part boundaries
/// are unambiguous.
pub fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// A ChaCha8 stream keyed by `seed` and a request identity.
pub fn keyed_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let seed_bytes = seed.to_le_bytes();
    let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
    all.push(&seed_bytes);
    all.extend(parts.iter().map(|p| p.as_bytes()));
    ChaCha8Rng::from_seed(digest(&all))
}

/// Uniform value in `[0, 1)` derived from a key.
pub fn keyed_unit(seed: u64, parts: &[&str]) -> f64 {
    use rand::Rng;
    keyed_rng(seed, parts).random::<f64>()
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize infallibly");
    let d = Sha256::digest(&bytes);
    hex::encode(&d[..16])
}

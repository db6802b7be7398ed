//! Seeds derived from argument tuples.
//!
//! Randomness that must not depend on evaluation order (teacher noise, pair
//! sampling, per-iteration shuffles) is drawn from a generator seeded by a
//! hash of the tuple that identifies the draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes a domain tag, a base seed and a list of string parts into a seed.
pub fn keyed_seed(domain: &str, base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn keyed_rng(domain: &str, base: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed_seed(domain, base, parts))
}

/// Hex digest of a byte buffer, truncated to 16 bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

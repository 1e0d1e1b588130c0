//! Seed derivation.
//!
//! Every stochastic stage draws from a `ChaCha8Rng` seeded by hashing the global
//! seed with stage-specific parts, so results do not depend on platform or on
//! the order in which stages run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// SHA-256 over the seed and each part (length-prefixed), folded to 32 bytes.
pub fn derive_seed(seed: u64, parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hasher.finalize().into()
}

pub fn derive_u64(seed: u64, parts: &[&str]) -> u64 {
    let bytes = derive_seed(seed, parts);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

pub fn stage_rng(seed: u64, parts: &[&str]) -> StageRng {
    ChaCha8Rng::from_seed(derive_seed(seed, parts))
}

/// Lower-case hex SHA-256 of `text`, truncated to `len` characters.
pub fn short_hash(text: &str, len: usize) -> String {
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    digest[..len.min(digest.len())].to_string()
}

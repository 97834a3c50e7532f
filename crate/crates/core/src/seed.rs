//! Derived randomness streams.
//!
//! Every party draws from its own ChaCha20 stream keyed by
//! `SHA-256(root seed, purpose label, indices)`. Streams for distinct
//! (label, indices) tuples are independent, and results never depend on the
//! order in which parties run.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    h.finalize().into()
}

pub fn derive_rng(root: u64, label: &str, indices: &[u64]) -> StreamRng {
    ChaCha20Rng::from_seed(derive_seed(root, label, indices))
}

/// Hex SHA-256 of a derived seed. Recorded in transcripts in place of the
/// seed itself.
pub fn seal(seed: &[u8; 32]) -> String {
    let digest: [u8; 32] = Sha256::digest(seed).into();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

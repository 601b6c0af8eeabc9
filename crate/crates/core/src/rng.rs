//! Named random sub-streams derived from one global seed.
//!
//! Every consumer of randomness asks for a stream by name (and optional
//! integer coordinates such as epoch and sample index). The stream seed is
//! the first eight bytes of `sha256(seed || name || coords)`, so streams are
//! independent of the order in which they are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(seed: u64, name: &str, coords: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

pub fn stream(seed: u64, name: &str, coords: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, coords))
}

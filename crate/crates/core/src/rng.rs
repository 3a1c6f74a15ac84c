//! Named, independent random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Seeds a generator from `sha256(root_seed || name)`, so each named task
/// draws from its own stream regardless of scheduling order.
pub fn stream(root_seed: u64, name: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}

//! Keyed random-number substreams.
//!
//! Every stochastic component draws from its own substream, keyed by a global
//! seed, a stream tag and (where applicable) a unit identifier such as a
//! patient id. Keys are hashed with SHA-256 into a ChaCha8 seed, so draws are
//! reproducible across platforms, independent of thread count and of the
//! order units are visited in. Generator: ChaCha8 (rand_chacha 0.3), keyed by
//! SHA-256 — pinned in simulator truth files as `chacha8/sha256-keyed/v1`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Name and version of the RNG scheme, recorded in truth files and manifests.
pub const RNG_SCHEME: &str = "chacha8/sha256-keyed/v1";

/// Substream for `(seed, tag)`.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    keyed(seed, tag, b"")
}

/// Substream for `(seed, tag, id)`; `id` is typically a patient id.
pub fn unit_stream(seed: u64, tag: &str, id: &str) -> ChaCha8Rng {
    keyed(seed, tag, id.as_bytes())
}

/// Substream for `(seed, tag, index)`, for numbered replications.
pub fn indexed_stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    keyed(seed, tag, &index.to_le_bytes())
}

fn keyed(seed: u64, tag: &str, id: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0x1f]);
    h.update(tag.as_bytes());
    h.update([0x1f]);
    h.update(id);
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

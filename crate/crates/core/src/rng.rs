//! Seeded random number streams.
//!
//! Every stochastic call site takes an explicit [`Rng`] handle. The generator is
//! ChaCha8 (`rand_chacha`), which produces the same stream on every platform for
//! a given 64-bit seed. Normal draws use the ziggurat sampler from `rand_distr`.
//!
//! Independent sub-streams are derived from a root seed and a textual label:
//! the sub-seed is the first eight bytes (little endian) of
//! `SHA-256(root_seed.to_le_bytes() || label)`. Labels used in this crate look
//! like `"trainer/init-d"` or `"ablate/seed/3"`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn substream(root: u64, label: &str) -> Rng {
    seeded(derive_seed(root, label))
}

pub fn standard_normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

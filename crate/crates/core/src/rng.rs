//! Seeded randomness. Every random draw in the engine goes through here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub type EngineRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> EngineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit hash of `(text, seed)`, independent of platform and
/// toolchain.
pub fn hash_with_seed(text: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Derives an independent child seed for a labelled sub-stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    hash_with_seed(label, seed)
}

pub fn gaussian_vec(rng: &mut EngineRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniformly distributed point on the unit sphere.
pub fn unit_vec(rng: &mut EngineRng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

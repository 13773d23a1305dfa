//! Deterministic random streams and stable hashing.
//!
//! Everything random in a run is drawn from ChaCha8 streams whose seeds are
//! derived by SHA-256 over the labelled inputs, so results do not depend on
//! platform word size or the standard library's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::grid::{Grid, Space};

/// A seed derived from a domain label and a list of integers.
pub fn derive_seed(label: &str, parts: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

pub fn rng(label: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(label, parts))
}

/// A grid of independent standard normal samples.
pub fn gaussian_grid(rng: &mut ChaCha8Rng, space: Space, dims: (usize, usize, usize)) -> Grid {
    Grid::from_fn(space, dims, |_| StandardNormal.sample(rng))
}

/// Stable 64-bit digest of raw bytes (first eight bytes of SHA-256).
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Stable digest of a grid's shape and exact bit patterns.
pub fn grid_checksum(grid: &Grid) -> u64 {
    let mut hasher = Sha256::new();
    let (c, h, w) = grid.dims();
    for d in [c, h, w] {
        hasher.update((d as u64).to_le_bytes());
    }
    for v in grid.data().iter() {
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

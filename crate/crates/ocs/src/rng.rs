//! Counter-based random streams.
//!
//! Every stream is keyed by a master seed, a label and a list of integer
//! coordinates, so a cell of a sweep draws the same numbers no matter which
//! thread evaluates it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic generator for the cell `(master, label, coords)`.
pub fn stream(master: u64, label: &str, coords: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Maps a signed shell index to a stream coordinate.
pub fn signed_coord(n: i64) -> u64 {
    n as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, "x", &[1, 2]).random();
        let b: u64 = stream(7, "x", &[1, 2]).random();
        let c: u64 = stream(7, "x", &[2, 1]).random();
        let d: u64 = stream(7, "y", &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}

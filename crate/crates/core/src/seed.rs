//! Seed fan-out: every stage draws from `derive_seed(top_seed, stage_tag)` so
//! stages stay reproducible independently of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Combines a top-level seed with a stage tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let digest = Sha256::digest(tag.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    seed.wrapping_add(u64::from_le_bytes(head))
}

pub fn stage_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_tags_give_distinct_seeds() {
        assert_ne!(derive_seed(0, "split"), derive_seed(0, "mask"));
        assert_eq!(derive_seed(7, "split"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "split"), derive_seed(8, "split"));
    }
}

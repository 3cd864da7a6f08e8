//! Counter-based random streams.
//!
//! Every random quantity is drawn from its own ChaCha stream whose key is
//! derived from the root seed, a named substream and a tuple of counters, so
//! results do not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a 64-bit key from `(seed, tag, counters)`.
pub fn derive_key(seed: u64, tag: &str, counters: &[u64]) -> u64 {
    let mut key = splitmix(seed ^ splitmix(tag_hash(tag)));
    for &c in counters {
        key = splitmix(key ^ splitmix(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    key
}

/// An independent generator for `(seed, tag, counters)`.
pub fn stream(seed: u64, tag: &str, counters: &[u64]) -> ChaCha8Rng {
    let key = derive_key(seed, tag, counters);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(1, "prior", &[0, 3, 1]).random();
        let b: u64 = stream(1, "prior", &[0, 3, 1]).random();
        let c: u64 = stream(1, "prior", &[0, 3, 2]).random();
        let d: u64 = stream(1, "noise", &[0, 3, 1]).random();
        let e: u64 = stream(2, "prior", &[0, 3, 1]).random();
        assert_eq!(a, b);
        assert!(a != c && a != d && a != e);
    }
}

//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), which is
//! specified bit-for-bit and therefore reproducible across platforms. A run
//! seed expands to a 256-bit key through `seed_from_u64` (PCG32 expansion), and
//! independent substreams are selected with ChaCha's 64-bit stream id, so the
//! draws for one decoding step never depend on how many draws other steps made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for the whole run.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator keyed by `(seed, stream)`; distinct streams do not overlap.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, 3).random();
        let b: u64 = substream(7, 3).random();
        let c: u64 = substream(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn known_first_draw() {
        // Pins the algorithm: a change of generator shows up here first.
        let first: u64 = seeded(0).random();
        assert_eq!(first, 0xb585_f767_a79a_3b6c);
        assert_ne!(first, seeded(1).random::<u64>());
    }
}

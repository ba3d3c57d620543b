use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used by every seeded operation in the crate.
///
/// ChaCha8 output is specified bit-for-bit, so plans, permutations and
/// presentation orders are identical across platforms for the same seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

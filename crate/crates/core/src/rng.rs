use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed used when a run does not supply one.
pub const DEFAULT_SEED: u64 = 20_190_530;

/// Private RNG stream for `(seed, stream)`. Streams never overlap, so batch
/// results do not depend on how paths are scheduled across workers.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index for component `component` (< 16) of path `path`.
pub fn path_stream(path: u64, component: u64) -> u64 {
    debug_assert!(component < 16);
    path.wrapping_mul(16).wrapping_add(component)
}

//! Named random sub-streams.
//!
//! Every consumer of randomness derives its generator from the run seed and a
//! fixed stream name, so adding a new consumer never shifts the values seen by
//! existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a over the stream name.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for the stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(name_hash(name));
    rng
}

/// Generator for the `index`-th replicate of stream `name`.
///
/// Replicates are independent of each other and of evaluation order, which
/// lets parallel workers draw them in any order.
pub fn replicate(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name).rotate_left(17));
    rng.set_stream(index);
    rng
}

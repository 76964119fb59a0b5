//! Seeded random streams.
//!
//! Every parallel workload is cut into fixed-size chunks; chunk `c` draws from
//! ChaCha8 stream `c` of the caller's seed, so results do not depend on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Rows per sampling chunk.
pub const CHUNK_ROWS: usize = 4096;

/// RNG for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed from `seed` and a purpose label (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw on (0, 1].
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

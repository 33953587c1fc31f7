//! Seeded, splittable random streams.
//!
//! Every consumer draws from a ChaCha8 stream keyed by `(seed, stream id)`,
//! so results never depend on the order in which independent jobs run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PARTITION_STREAM: u64 = 0x100;
pub const INSERTION_STREAM: u64 = 0x200;
pub const INIT_STREAM: u64 = 0x300;
pub const SHUFFLE_STREAM: u64 = 0x400;
pub const KG_SAMPLE_STREAM: u64 = 0x500;
pub const SYNTH_STREAM: u64 = 0x600;
/// Per-sentence substreams start here; add the sentence index.
pub const SENTENCE_STREAM_BASE: u64 = 1 << 32;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Named random substreams derived from one root seed.
//!
//! Every consumer of randomness asks for its own stream, so changing how one
//! source draws (say, the batch shuffler) never shifts what another sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data,
    Mislabel,
    Split,
    Init,
    Batching,
    RandomPruning,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x01,
            Stream::Mislabel => 0x02,
            Stream::Split => 0x03,
            Stream::Init => 0x04,
            Stream::Batching => 0x05,
            Stream::RandomPruning => 0x06,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of `stream` under `root`.
pub fn substream_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream.tag()) ^ index)
}

pub fn substream_rng(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, stream, index))
}

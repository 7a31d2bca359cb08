use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A reproducible random stream: `(seed, stream_id)` fully determines the draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub const fn from_seed(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Deterministic child stream, independent of the parent and of siblings.
    pub fn substream(&self, index: u64) -> Self {
        let mixed =
            splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Self {
            seed: self.seed,
            stream_id: mixed,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

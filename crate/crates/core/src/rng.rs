//! Seeded random streams.
//!
//! A session owns one root seed. Each subsystem draws from its own ChaCha
//! stream derived from that seed, so extra draws in one subsystem never shift
//! the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete generator used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

/// Named sub-streams of a session seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Segments,
    Durations,
    Cognitive,
    Interrupts,
    Knowledge,
    Agent,
    Breakdown,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Segments => 1,
            Stream::Durations => 2,
            Stream::Cognitive => 3,
            Stream::Interrupts => 4,
            Stream::Knowledge => 5,
            Stream::Agent => 6,
            Stream::Breakdown => 7,
        }
    }
}

/// Build the generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// All per-session streams bundled together.
#[derive(Debug, Clone)]
pub struct SessionStreams {
    pub segments: SimRng,
    pub durations: SimRng,
    pub cognitive: SimRng,
    pub interrupts: SimRng,
    pub knowledge: SimRng,
    pub agent: SimRng,
}

impl SessionStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            segments: stream_rng(seed, Stream::Segments),
            durations: stream_rng(seed, Stream::Durations),
            cognitive: stream_rng(seed, Stream::Cognitive),
            interrupts: stream_rng(seed, Stream::Interrupts),
            knowledge: stream_rng(seed, Stream::Knowledge),
            agent: stream_rng(seed, Stream::Agent),
        }
    }
}

/// Derive the seed of the `index`-th session of a batch (SplitMix64 finalizer).
pub fn derive_seed(batch_seed: u64, index: u64) -> u64 {
    let mut z = batch_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

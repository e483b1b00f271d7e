//! Named random streams derived from one master seed.
//!
//! Each stream is a ChaCha8 generator keyed by the master seed and selected by
//! the ChaCha stream counter, so draws on one stream never shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Dataset,
    EpisodeSampling,
    Init,
    BackgroundMix,
    Validation,
    Evaluation,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Dataset => 1,
            Stream::EpisodeSampling => 2,
            Stream::Init => 3,
            Stream::BackgroundMix => 4,
            Stream::Validation => 5,
            Stream::Evaluation => 6,
        }
    }
}

/// Generator for `stream` under `master`.
pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    sub_stream_rng(master, stream, 0)
}

/// Generator for `stream` with an extra index (e.g. the epoch number) folded in.
pub fn sub_stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((stream.id() << 48) ^ index);
    rng
}

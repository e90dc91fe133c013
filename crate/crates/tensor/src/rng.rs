//! Seedable generator split into named, independent substreams.
//!
//! Each consumer draws from its own ChaCha stream derived from the run
//! seed, so turning one consumer off never shifts another's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    Data,
    Dropout,
    Switch,
    Latent,
    Shuffle,
    Split,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Init => "init",
            Stream::Data => "data",
            Stream::Dropout => "dropout",
            Stream::Switch => "switch",
            Stream::Latent => "latent",
            Stream::Shuffle => "shuffle",
            Stream::Split => "split",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, s: Stream) -> ChaCha8Rng {
        self.named(s.name())
    }

    pub fn named(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

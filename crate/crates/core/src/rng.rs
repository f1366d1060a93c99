//! Seeded random streams.
//!
//! Every random draw in a simulation comes from a [`ChaCha12Rng`] keyed by the
//! pair `(instance_seed, episode_seed)` and selected by a [`Purpose`]. The key
//! is expanded from the two seeds with SplitMix64, and the purpose picks the
//! ChaCha stream id, so the three streams of one episode never overlap and a
//! change in how one purpose consumes randomness cannot shift the others.
//! ChaCha output is specified bit-for-bit, which makes every run reproducible
//! across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Instance = 0,
    Context = 1,
    Reward = 2,
    PrivacyNoise = 3,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(instance_seed, episode_seed, purpose)`.
pub fn stream(instance_seed: u64, episode_seed: u64, purpose: Purpose) -> StreamRng {
    let mut state = instance_seed ^ splitmix64(&mut episode_seed.clone());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(purpose as u64);
    rng
}

/// Stream for drawing a bandit instance; independent of any episode.
pub fn instance_stream(instance_seed: u64) -> StreamRng {
    stream(instance_seed, 0, Purpose::Instance)
}

/// The three per-episode streams, bundled so an episode owns all of them.
#[derive(Debug, Clone)]
pub struct EpisodeStreams {
    pub context: StreamRng,
    pub reward: StreamRng,
    pub noise: StreamRng,
}

impl EpisodeStreams {
    pub fn new(instance_seed: u64, episode_seed: u64) -> Self {
        Self {
            context: stream(instance_seed, episode_seed, Purpose::Context),
            reward: stream(instance_seed, episode_seed, Purpose::Reward),
            noise: stream(instance_seed, episode_seed, Purpose::PrivacyNoise),
        }
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Seeded random streams.
//!
//! Every stochastic choice in a run (initialization, client selection,
//! per-epoch shuffling, partitioning, augmentation) draws from its own
//! stream keyed by `(master seed, purpose, client, round)`. A stream's
//! output depends only on that key, never on how many values other
//! streams consumed, which is what makes results independent of worker
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init = 1,
    Select = 2,
    Shuffle = 3,
    Partition = 4,
    Augment = 5,
    Synth = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 256-bit ChaCha key for a stream.
pub fn stream_key(seed: u64, purpose: Purpose, client: u64, round: u64) -> [u8; 32] {
    let mut state = splitmix64(seed);
    let mut key = [0u8; 32];
    let words = [purpose as u64, client, round, 0x464c_4d44];
    for (chunk, word) in key.chunks_exact_mut(8).zip(words) {
        state = splitmix64(state ^ splitmix64(word));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

pub fn stream(seed: u64, purpose: Purpose, client: u64, round: u64) -> StreamRng {
    ChaCha8Rng::from_seed(stream_key(seed, purpose, client, round))
}

//! Counter-based random substreams.
//!
//! A master seed plus a tag path (experiment, environment, replicate, ...)
//! deterministically yields an independent stream. Parallel schedules then
//! cannot change which draws a work item sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The stream type used throughout the crate.
pub type Stream = ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the substream identified by `tags` from a master seed.
pub fn substream(master: u64, tags: &[u64]) -> Stream {
    let mut state = master ^ 0x51f0_e9b3_24a8_c07d;
    let mut acc = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0x2545_f491_4f6c_dd1d);
        acc ^= splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    let mut s = acc;
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

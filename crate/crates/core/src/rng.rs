//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose key is a
//! pure function of the run seed and a tuple of integer coordinates (class,
//! sample, quantile, purpose...). Work can therefore be scheduled in any
//! order, or in parallel, without changing a single output bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams for different consumers of the same
/// coordinates disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialCondition = 1,
    Transform = 2,
    Corruption = 3,
    Split = 4,
    Training = 5,
    Attribution = 6,
    Occlusion = 7,
    RandomMask = 8,
    Baseline = 9,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream from `seed`, a purpose and coordinates.
pub fn substream(seed: u64, purpose: Purpose, coords: &[u64]) -> StreamRng {
    let mut state = seed ^ 0x6A09_E667_F3BC_C908;
    let mut acc = splitmix64(&mut state);
    for &word in std::iter::once(&(purpose as u64)).chain(coords) {
        state ^= word.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        acc ^= splitmix64(&mut state).rotate_left(17);
        state = state.wrapping_add(acc);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

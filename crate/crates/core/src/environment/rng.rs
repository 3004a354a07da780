//! Counter-based random streams.
//!
//! Every draw in the crate is keyed by a tuple (seed, role, index) rather
//! than by position in one sequential stream, so results do not depend on
//! iteration order or on how work is split between threads.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stream roles, so that replica `i` of different consumers never collide.
pub const FIELD_STREAM: u64 = 1;
pub const PATH_STREAM: u64 = 2;
pub const LIMIT_STREAM: u64 = 3;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream `(seed, role, index)`.
pub fn derive_seed(seed: u64, role: u64, index: u64) -> u64 {
    let h = mix(seed ^ GOLDEN);
    let h = mix(h ^ role.wrapping_mul(GOLDEN).wrapping_add(1));
    mix(h ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93).wrapping_add(2))
}

/// Seed of the disorder field used by replica `index`.
pub fn field_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, FIELD_STREAM, index)
}

/// Seed of the disorder variable at time-space site `(n, x)`.
pub fn site_seed(seed: u64, n: usize, x: &[i64]) -> u64 {
    let mut h = mix(seed ^ mix(n as u64 ^ GOLDEN));
    for &c in x {
        h = mix(h ^ (c as u64).wrapping_add(GOLDEN));
    }
    h
}

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { state: seed }
    }

    pub fn for_stream(seed: u64, role: u64, index: u64) -> Self {
        CounterRng::new(derive_seed(seed, role, index))
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

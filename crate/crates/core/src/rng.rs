//! Named random substreams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(root seed, component, ids...)`. Streams are independent of thread
//! scheduling, so parallel rollouts reproduce serial ones bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a; stable across platforms and compiler versions.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn key(&self, component: &str, ids: &[u64]) -> u64 {
        let mut h = splitmix64(self.seed ^ fnv1a(component.as_bytes()));
        for &id in ids {
            h = splitmix64(h ^ splitmix64(id));
        }
        h
    }

    pub fn stream(&self, component: &str, ids: &[u64]) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key(component, ids))
    }
}

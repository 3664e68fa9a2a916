//! Explicit, seedable random streams.
//!
//! Every random draw in the crate goes through an [`RngState`] that the caller
//! owns. Streams are derived from a master seed with [`derive_seed`], keyed by
//! a label and an index:
//!
//! ```text
//! derive_seed(master, label, index) =
//!     splitmix64(splitmix64(master ^ fnv1a64(label)) ^ splitmix64(index))
//! ```
//!
//! The result only depends on its three inputs, so a run's streams do not
//! change when other runs are added, removed or reordered.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The stream for `(master, label, index)`; see the module docs.
    pub fn derived(master: u64, label: &str, index: u64) -> Self {
        RngState::from_seed(derive_seed(master, label, index))
    }

    /// Worker stream `index` of `master`, for splitting one sampling budget
    /// across workers.
    pub fn worker(master: u64, index: u64) -> Self {
        RngState::derived(master, "worker", index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a64(label)) ^ splitmix64(index))
}

//! Deterministic random streams.
//!
//! All stochastic pieces of the pipeline (tap-in sampling, apportionment
//! tie-breaks, coefficient sampling) draw from ChaCha streams derived from a
//! single master seed, so a full run is reproducible bit-for-bit. The float
//! mapping is done here rather than through `rand` distributions to keep the
//! byte-level output independent of distribution-crate internals.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// splitmix64 finalizer, used to fold stream tags into sub-seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a master seed and a list of tag components.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = mix(master);
    for &t in tags {
        h = mix(h ^ t);
    }
    h
}

/// Hash a string tag into a u64 for use with [`derive_seed`].
pub fn tag(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Seeded deterministic RNG.
pub struct DetRng(ChaCha12Rng);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng(ChaCha12Rng::seed_from_u64(seed))
    }

    /// RNG for a named sub-stream of `master`.
    pub fn derived(master: u64, name: &str, tags: &[u64]) -> Self {
        Self::new(derive_seed(master, &{
            let mut v = vec![tag(name)];
            v.extend_from_slice(tags);
            v
        }))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

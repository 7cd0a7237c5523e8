//! Seed fan-out: every random stream in a run is derived from one master
//! seed plus a purpose tag (and optional indices such as epoch or sample).
//!
//! Derivation: the master seed is xored with an FNV-1a hash of the tag, then
//! each index is mixed in with a splitmix64 round. The result seeds a
//! `ChaCha8Rng`. Streams for distinct (tag, indices) tuples are independent,
//! so batch augmentation can be parallelized per sample without changing the
//! byte-level outcome of a run.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// 64-bit seed for the stream identified by (master, tag, indices).
pub fn derive_seed(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut s = splitmix64(master ^ fnv1a(tag.as_bytes()));
    for &i in indices {
        s = splitmix64(s ^ i);
    }
    s
}

/// Deterministic generator for the stream identified by (master, tag).
pub fn substream(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, &[]))
}

/// Deterministic generator for the stream identified by (master, tag, indices).
pub fn substream_indexed(master: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, indices))
}

/// Standard normal draw via Box-Muller.
pub fn next_gaussian<R: Rng>(rng: &mut R) -> f64 {
    // u1 in (0, 1] so the log is finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fisher-Yates shuffle of `0..n` driven by the given generator.
pub fn shuffled_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

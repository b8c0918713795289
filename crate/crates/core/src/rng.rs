//! Keyed counter-based randomness.
//!
//! Every random quantity in the lab is addressed by a key tuple and drawn
//! from a ChaCha8 block stream positioned at a fixed word offset, so the
//! value depends only on the key and never on scheduling or draw order in
//! other replicas.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep the key spaces of different consumers disjoint.
pub mod tag {
    pub const WIENER: u64 = 0x5749_454e_4552;
    pub const BACKWARD: u64 = 0x4241_434b;
    pub const HITTING: u64 = 0x4849_5454;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const REPLICA: u64 = 0x5245_504c;
}

fn key(master_seed: u64, stream_id: u64, purpose: u64) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&master_seed.to_le_bytes());
    k[8..16].copy_from_slice(&stream_id.to_le_bytes());
    k[16..24].copy_from_slice(&purpose.to_le_bytes());
    k[24..].copy_from_slice(b"spdelab\0");
    k
}

/// Generator for one keyed substream, positioned at word 0.
pub fn substream(master_seed: u64, stream_id: u64, purpose: u64, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key(master_seed, stream_id, purpose));
    rng.set_stream(sub);
    rng
}

/// Uniform in the open interval (0, 1) from one 64-bit word.
#[inline]
pub fn open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal by Box–Muller; always consumes exactly two words, which
/// keeps indexed draws aligned to fixed stream positions.
#[inline]
pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = open01(rng);
    let u2 = open01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard normal at a fixed index of a keyed stream.
pub fn indexed_normal(rng: &mut ChaCha8Rng, index: u64) -> f64 {
    // two u64 words = four 32-bit words per index
    rng.set_word_pos(index as u128 * 4);
    normal(rng)
}

/// Uniform index draw used by bootstrap resampling.
pub fn index_below<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

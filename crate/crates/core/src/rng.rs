//! Seeded random streams and stable seed derivation.
//!
//! Every stochastic routine takes an explicit `Rng`; nothing here touches
//! thread-local or OS entropy, so a run is a pure function of its seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream type used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Independent sub-streams carved out of one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Photons = 0,
    DarkArm0 = 1,
    DarkArm1 = 2,
    Sync = 3,
}

/// A ChaCha8 stream for `seed`.
pub fn stream(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A ChaCha8 stream for `seed`, positioned on the given sub-stream.
pub fn sub_stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Incremental 64-bit hash with a fixed definition (FNV-1a over the fed
/// bytes, SplitMix64 on finish), so derived seeds never change between
/// toolchains or platforms.
#[derive(Debug, Clone)]
pub struct StableHasher(u64);

impl Default for StableHasher {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl StableHasher {
    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(self, v: f64) -> Self {
        // -0.0 and 0.0 are the same sweep coordinate
        let v = if v == 0.0 { 0.0 } else { v };
        self.u64(v.to_bits())
    }

    pub fn str(self, s: &str) -> Self {
        self.u64(s.len() as u64).bytes(s.as_bytes())
    }

    pub fn finish(self) -> u64 {
        splitmix64(self.0)
    }
}

/// Alice's bit for a clock slot, derived from the run key by a counter-based
/// hash. Independent uniform bits, addressable without materializing the
/// whole bit stream.
#[inline]
pub fn slot_bit(key: u64, slot: u64) -> u8 {
    (splitmix64(key ^ slot.wrapping_mul(0xD1B5_4A32_D192_ED03)) >> 63) as u8
}

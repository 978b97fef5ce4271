//! Toeplitz-matrix universal hashing over GF(2).
//!
//! The `m x n` matrix is defined by `m + n - 1` seed bits `s` with
//! `T[i][j] = s[i + n - 1 - j]`. Against the bit-reversed key `r`, output bit
//! `i` is the parity of `s[i..i + n] & r`, evaluated a word at a time.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::stream;

struct PackedBits {
    words: Vec<u64>,
}

impl PackedBits {
    fn from_bits<I: IntoIterator<Item = u8>>(bits: I, len: usize) -> Self {
        let mut words = vec![0u64; len.div_ceil(64) + 1];
        for (i, b) in bits.into_iter().enumerate() {
            words[i / 64] |= u64::from(b & 1) << (i % 64);
        }
        Self { words }
    }

    /// Bits `[start, start + 64)`.
    #[inline]
    fn word_at(&self, start: usize) -> u64 {
        let (w, s) = (start / 64, start % 64);
        if s == 0 {
            self.words[w]
        } else {
            (self.words[w] >> s) | (self.words[w + 1] << (64 - s))
        }
    }
}

/// Compresses `key` (one bit per byte) to `output_len` bits with the
/// Toeplitz matrix generated from `seed`.
pub fn privacy_amplify(key: &[u8], seed: u64, output_len: usize) -> Result<Vec<u8>> {
    let n = key.len();
    if output_len > n {
        return Err(Error::Usage(format!(
            "output length {output_len} exceeds input length {n}"
        )));
    }
    if output_len == 0 {
        return Ok(Vec::new());
    }
    let seed_len = output_len + n - 1;
    let mut rng = stream(seed);
    let mut seed_words = vec![0u64; seed_len.div_ceil(64) + 2];
    seed_words.iter_mut().for_each(|w| *w = rng.next_u64());
    let tail = seed_len % 64;
    if tail != 0 {
        seed_words[seed_len / 64] &= (1u64 << tail) - 1;
    }
    seed_words[seed_len / 64 + 1..].iter_mut().for_each(|w| *w = 0);
    let s = PackedBits { words: seed_words };

    let r = PackedBits::from_bits(key.iter().rev().copied(), n);
    let full = n / 64;
    let rest = n % 64;
    let mask = if rest == 0 { 0 } else { (1u64 << rest) - 1 };
    Ok((0..output_len)
        .map(|i| {
            let mut acc = 0u64;
            for w in 0..full {
                acc ^= s.word_at(i + 64 * w) & r.words[w];
            }
            if rest != 0 {
                acc ^= s.word_at(i + 64 * full) & r.words[full] & mask;
            }
            (acc.count_ones() & 1) as u8
        })
        .collect())
}

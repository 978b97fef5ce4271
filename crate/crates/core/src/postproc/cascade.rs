//! Cascade error reconciliation.
//!
//! Both parties are simulated in-process. Every parity Alice reveals is
//! counted once; Bob-side parities are free.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const CASCADE_PASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconciliationReport {
    pub passes: usize,
    pub parity_bits_leaked: usize,
    /// Bits flipped in Bob's key.
    pub corrections: usize,
    /// Remaining mismatches against Alice's key.
    pub residual_errors: usize,
    pub corrected_key_len: usize,
}

struct Pass {
    /// Position in this pass's order -> key index.
    order: Vec<usize>,
    /// Key index -> position.
    position: Vec<usize>,
    block: usize,
    alice_parity: Vec<u8>,
}

impl Pass {
    fn new(order: Vec<usize>, block: usize, alice: &[u8]) -> Self {
        let mut position = vec![0; order.len()];
        for (p, &i) in order.iter().enumerate() {
            position[i] = p;
        }
        let alice_parity = order
            .chunks(block)
            .map(|c| c.iter().fold(0, |acc, &i| acc ^ alice[i]))
            .collect();
        Self {
            order,
            position,
            block,
            alice_parity,
        }
    }

    fn parity(&self, key: &[u8], lo: usize, hi: usize) -> u8 {
        self.order[lo..hi].iter().fold(0, |acc, &i| acc ^ key[i])
    }

    fn block_range(&self, b: usize) -> (usize, usize) {
        (b * self.block, ((b + 1) * self.block).min(self.order.len()))
    }

    fn block_of(&self, index: usize) -> usize {
        self.position[index] / self.block
    }
}

/// Corrects Bob's key towards Alice's with four Cascade passes. The first
/// block size is `ceil(0.73 / qber_estimate)`, doubling each pass; passes
/// after the first work on a shared random permutation.
pub fn reconcile<R: Rng + ?Sized>(
    alice: &[u8],
    bob: &[u8],
    qber_estimate: f64,
    rng: &mut R,
) -> Result<(Vec<u8>, ReconciliationReport)> {
    if alice.len() != bob.len() {
        return Err(Error::Usage(format!(
            "key lengths differ: {} vs {}",
            alice.len(),
            bob.len()
        )));
    }
    if !(qber_estimate > 0.0 && qber_estimate < 0.5) {
        return Err(Error::Usage(format!("qber estimate {qber_estimate} outside (0,0.5)")));
    }
    let n = alice.len();
    let mut bob = bob.to_vec();
    let mut leaked = 0usize;
    let mut corrections = 0usize;
    let mut passes: Vec<Pass> = Vec::with_capacity(CASCADE_PASSES);
    let mut block = ((0.73 / qber_estimate).ceil() as usize).max(1);

    if n > 0 {
        for p in 0..CASCADE_PASSES {
            let mut order: Vec<usize> = (0..n).collect();
            if p > 0 {
                order.shuffle(rng);
            }
            let pass = Pass::new(order, block.min(n), alice);
            leaked += pass.alice_parity.len();
            let mut queue: Vec<(usize, usize)> = (0..pass.alice_parity.len()).rev().map(|b| (p, b)).collect();
            passes.push(pass);

            while let Some((pi, b)) = queue.pop() {
                let pass = &passes[pi];
                let (mut lo, mut hi) = pass.block_range(b);
                if pass.parity(&bob, lo, hi) == pass.alice_parity[b] {
                    continue;
                }
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    leaked += 1;
                    let a = pass.order[lo..mid].iter().fold(0, |acc, &i| acc ^ alice[i]);
                    if pass.parity(&bob, lo, mid) != a {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let idx = pass.order[lo];
                bob[idx] ^= 1;
                corrections += 1;
                for (qi, other) in passes.iter().enumerate() {
                    if qi != pi {
                        queue.push((qi, other.block_of(idx)));
                    }
                }
            }
            block *= 2;
        }
    }

    let residual_errors = alice.iter().zip(&bob).filter(|(a, b)| a != b).count();
    let report = ReconciliationReport {
        passes: passes.len(),
        parity_bits_leaked: leaked,
        corrections,
        residual_errors,
        corrected_key_len: n,
    };
    Ok((bob, report))
}

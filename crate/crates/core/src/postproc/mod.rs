//! Classical post-processing: secure-rate estimate, error reconciliation and
//! privacy amplification.

mod cascade;
mod toeplitz;

pub use cascade::{reconcile, ReconciliationReport, CASCADE_PASSES};
pub use toeplitz::privacy_amplify;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    /// QBER at or above which no key is extracted.
    pub qber_secure_threshold: f64,
    /// Reconciliation leakage relative to the Shannon bound.
    pub ec_inefficiency_f: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            qber_secure_threshold: 0.10,
            ec_inefficiency_f: 1.16,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.qber_secure_threshold > 0.0 && self.qber_secure_threshold < 0.5) {
            return Err(Error::InvalidConfig("qber_secure_threshold must be in (0,0.5)".into()));
        }
        if !(self.ec_inefficiency_f >= 1.0 && self.ec_inefficiency_f.is_finite()) {
            return Err(Error::InvalidConfig("ec_inefficiency_f must be >= 1".into()));
        }
        Ok(())
    }
}

/// Shannon entropy of a Bernoulli(p) variable in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Usage(format!("probability {p} outside [0,1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Secret fraction `1 - f h2(q) - h2(q)`, floored at zero and cut to zero at
/// the security threshold.
pub fn secret_fraction(qber: f64, params: &SecurityParams) -> f64 {
    if !(qber < params.qber_secure_threshold) || qber < 0.0 {
        return 0.0;
    }
    let h = binary_entropy(qber).unwrap_or(1.0);
    (1.0 - params.ec_inefficiency_f * h - h).max(0.0)
}

/// Final-key rate after error correction and privacy amplification.
pub fn net_rate(sift_rate_bps: f64, qber: f64, params: &SecurityParams) -> f64 {
    sift_rate_bps.max(0.0) * secret_fraction(qber, params)
}

/// Length of the amplified key for `n` reconciled bits: the estimated
/// information available to an eavesdropper, `n h2(q)`, plus everything
/// disclosed during reconciliation is removed.
pub fn final_key_length(n: usize, qber: f64, leaked_bits: usize, params: &SecurityParams) -> usize {
    if !(qber < params.qber_secure_threshold) {
        return 0;
    }
    let h = binary_entropy(qber.max(0.0)).unwrap_or(1.0);
    let kept = (n as f64 * (1.0 - h)).floor() as usize;
    kept.saturating_sub(leaked_bits)
}

/// Lower-case hex with bits packed most significant first; a ragged last
/// byte is zero-padded.
pub fn bits_to_hex(bits: &[u8]) -> String {
    bits.chunks(8)
        .map(|chunk| {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i)));
            format!("{byte:02x}")
        })
        .collect()
}

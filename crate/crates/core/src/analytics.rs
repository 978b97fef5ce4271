//! Closed-form model of the link.
//!
//! Timing components are treated as independent Gaussians combined in
//! quadrature. Neighbour-slot leakage is truncated at one slot either side,
//! and a click attributed to the wrong slot carries a random bit. The
//! detector's optional exponential tail is not modelled here.

use statrs::function::erf::erfc;

use crate::config::LinkConfig;
use crate::detector::FWHM_PER_SIGMA;
use crate::error::{Error, Result};
use crate::photonics::{channel_broadening_fwhm, channel_transmittance, emitter_pulse_fwhm};
use crate::protocol::GateSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingBudget {
    pub emitter_fwhm_ps: f64,
    pub channel_fwhm_ps: f64,
    pub detector_fwhm_ps: f64,
    pub sync_fwhm_ps: f64,
}

impl TimingBudget {
    pub fn total_fwhm_ps(&self) -> f64 {
        total_system_fwhm(&[
            self.emitter_fwhm_ps,
            self.channel_fwhm_ps,
            self.detector_fwhm_ps,
            self.sync_fwhm_ps,
        ])
    }
}

/// Quadrature sum of component widths.
pub fn total_system_fwhm(components: &[f64]) -> f64 {
    debug_assert!(components.iter().all(|c| *c >= 0.0));
    components.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateLeakage {
    /// Accepted into the emission slot.
    pub p_correct: f64,
    /// Accepted into slot k-1 or k+1.
    pub p_wrong_slot: f64,
    /// Outside every gate.
    pub p_rejected: f64,
}

/// Gaussian mass of width `total_fwhm_ps`, centred `centroid_offset_ps`
/// after the slot centre, landing in each gate.
pub fn gate_leakage(total_fwhm_ps: f64, clock_hz: f64, gate: &GateSpec, centroid_offset_ps: f64) -> GateLeakage {
    let period = 1e12 / clock_hz;
    let (lo, hi) = acceptance_window(period, gate);
    if total_fwhm_ps <= 0.0 {
        let inside = |k: f64| (lo + k * period..=hi + k * period).contains(&centroid_offset_ps);
        let c = if inside(0.0) { 1.0 } else { 0.0 };
        let w = if inside(-1.0) || inside(1.0) { 1.0 } else { 0.0 };
        return GateLeakage {
            p_correct: c,
            p_wrong_slot: w,
            p_rejected: 1.0 - c - w,
        };
    }
    let sigma = total_fwhm_ps / FWHM_PER_SIGMA;
    let mass = |a: f64, b: f64| {
        let za = (a - centroid_offset_ps) / (sigma * std::f64::consts::SQRT_2);
        let zb = (b - centroid_offset_ps) / (sigma * std::f64::consts::SQRT_2);
        // difference of upper tails keeps precision far from the centre
        (0.5 * (erfc(za) - erfc(zb))).max(0.0)
    };
    let p_correct = mass(lo, hi);
    let p_wrong_slot = mass(lo - period, hi - period) + mass(lo + period, hi + period);
    GateLeakage {
        p_correct,
        p_wrong_slot,
        p_rejected: (1.0 - p_correct - p_wrong_slot).max(0.0),
    }
}

/// Accepted interval around slot centre 0: the nearest-slot cell
/// intersected with the gate.
pub fn acceptance_window(period_ps: f64, gate: &GateSpec) -> (f64, f64) {
    let half_gate = gate.gate_fraction * period_ps / 2.0;
    let lo = (-period_ps / 2.0).max(gate.window_offset_ps - half_gate);
    let hi = (period_ps / 2.0).min(gate.window_offset_ps + half_gate);
    (lo, hi.max(lo))
}

/// Fraction of a uniformly distributed click that some gate accepts.
pub fn gate_duty_cycle(gate: &GateSpec) -> f64 {
    let (lo, hi) = acceptance_window(1.0, gate);
    hi - lo
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticRates {
    /// Signal clicks per arm before dead time.
    pub per_arm_signal_cps: f64,
    /// Signal plus dark clicks per arm after dead time; indexes the jitter table.
    pub per_arm_detected_cps: f64,
    pub total_detected_cps: f64,
    /// Kept fraction after dead time.
    pub dead_time_factor: f64,
    /// Conclusive signal clicks on both arms after dead time.
    pub conclusive_cps: f64,
    /// Dark clicks on both arms accepted by the gate.
    pub dark_accepted_cps: f64,
    pub leakage: GateLeakage,
    pub timing: TimingBudget,
    pub centroid_shift_ps: f64,
    pub sift_rate_bps: f64,
}

/// Expected rates at the configured operating point.
pub fn analytic_rates(link: &LinkConfig) -> AnalyticRates {
    let det = &link.detector;
    // Each arm sees half the photons; it clicks only on its own state (half
    // of Alice's bits), with projection cos^2(45 deg) = 1/2.
    let per_arm_signal_cps =
        link.source.clock_hz * link.photons_per_pulse() * channel_transmittance(&link.channel) * det.efficiency / 8.0;
    let raw = per_arm_signal_cps + det.dark_cps;
    let dead_time_factor = 1.0 / (1.0 + raw * det.dead_time_ns * 1e-9);
    let per_arm_detected_cps = raw * dead_time_factor;

    let detector_fwhm_ps = det.jitter_table.fwhm_at(per_arm_detected_cps);
    let centroid_shift_ps = det.centroid_alpha * (detector_fwhm_ps - det.jitter_table.low_rate_fwhm());
    let timing = TimingBudget {
        emitter_fwhm_ps: emitter_pulse_fwhm(&link.source),
        channel_fwhm_ps: channel_broadening_fwhm(&link.channel),
        detector_fwhm_ps,
        sync_fwhm_ps: link.sync_fwhm_ps,
    };
    let leakage = gate_leakage(
        timing.total_fwhm_ps(),
        link.source.clock_hz,
        &link.gate,
        centroid_shift_ps,
    );

    let conclusive_cps = 2.0 * per_arm_signal_cps * dead_time_factor;
    let dark_accepted_cps = 2.0 * det.dark_cps * dead_time_factor * gate_duty_cycle(&link.gate);
    AnalyticRates {
        per_arm_signal_cps,
        per_arm_detected_cps,
        total_detected_cps: 2.0 * per_arm_detected_cps,
        dead_time_factor,
        conclusive_cps,
        dark_accepted_cps,
        leakage,
        timing,
        centroid_shift_ps,
        sift_rate_bps: conclusive_cps * (1.0 - leakage.p_rejected) + dark_accepted_cps,
    }
}

/// Predicted sifted-key QBER. Errors with [`Error::NoSignal`] when nothing
/// would be accepted.
pub fn analytic_qber(link: &LinkConfig) -> Result<f64> {
    qber_from_rates(&analytic_rates(link))
}

pub fn qber_from_rates(r: &AnalyticRates) -> Result<f64> {
    let denom = r.conclusive_cps * (1.0 - r.leakage.p_rejected) + r.dark_accepted_cps;
    if denom <= 0.0 {
        return Err(Error::NoSignal);
    }
    Ok((0.5 * r.leakage.p_wrong_slot * r.conclusive_cps + 0.5 * r.dark_accepted_cps) / denom)
}

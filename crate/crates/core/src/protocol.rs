//! The B92 link engine.
//!
//! Bob's receiver is passive: a 50/50 splitter feeds two arms, one analyzer
//! at 135 deg (a click means Alice sent 0 deg, bit 0) and one at 90 deg (a
//! click means 45 deg, bit 1). Every click is conclusive; errors arise only
//! when timing noise pushes a click into a neighbouring slot, or from dark
//! counts.
//!
//! Slot `k` is centred on `k * T` of Bob's clock, which is locked to the sync
//! pulses. The acquisition gate sits at a fixed offset from that reference and
//! never follows the detector's rate-dependent centroid drift.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analytics::analytic_rates;
use crate::config::LinkConfig;
use crate::detector::{
    apply_dead_time, click_probability, generate_dark_counts, DetectionEvent, Origin, FWHM_PER_SIGMA,
};
use crate::error::{Error, Result};
use crate::photonics::{channel_broadening_fwhm, channel_transmittance, emitter_pulse_fwhm, encode_bit, ChannelMode};
use crate::postproc::net_rate;
use crate::rng::{slot_bit, splitmix64, sub_stream, Stream};

/// Analyzer angle of arm 0, conclusive for bit 0.
pub const ANALYZER_BIT0_DEG: f64 = 135.0;
/// Analyzer angle of arm 1, conclusive for bit 1.
pub const ANALYZER_BIT1_DEG: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSpec {
    /// Fraction of the slot accepted, centred on the expected arrival.
    pub gate_fraction: f64,
    /// Gate centre relative to the sync-derived slot centre.
    pub window_offset_ps: f64,
}

impl Default for GateSpec {
    fn default() -> Self {
        Self {
            gate_fraction: 1.0,
            window_offset_ps: 0.0,
        }
    }
}

impl GateSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_fraction > 0.0 && self.gate_fraction <= 1.0) {
            return Err(Error::InvalidConfig("gate_fraction must be in (0,1]".into()));
        }
        if !self.window_offset_ps.is_finite() {
            return Err(Error::InvalidConfig("window_offset_ps must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum B92Outcome {
    Conclusive { bit: u8 },
    Inconclusive,
}

/// One photon through Bob's passive receiver. `efficiencies` are the arm 0
/// and arm 1 detection efficiencies. The clicking arm's index equals the
/// conclusive bit.
pub fn measure_b92<R: Rng + ?Sized>(pol_angle_deg: f64, efficiencies: [f64; 2], rng: &mut R) -> B92Outcome {
    let arm = usize::from(rng.random::<bool>());
    let analyzer = [ANALYZER_BIT0_DEG, ANALYZER_BIT1_DEG][arm];
    let u: f64 = rng.random();
    if u < click_probability(pol_angle_deg, analyzer, efficiencies[arm]) {
        B92Outcome::Conclusive { bit: arm as u8 }
    } else {
        B92Outcome::Inconclusive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotAssignment {
    Accepted(u64),
    Rejected,
}

/// Attributes a timestamp to the nearest slot centre and applies the gate.
/// Ties at a slot boundary go to the later slot.
pub fn assign_slot(timestamp_ps: f64, clock_hz: f64, gate: &GateSpec) -> SlotAssignment {
    let period = 1e12 / clock_hz;
    let k = (timestamp_ps / period + 0.5).floor();
    if k < 0.0 {
        return SlotAssignment::Rejected;
    }
    let centre = k * period + gate.window_offset_ps;
    if (timestamp_ps - centre).abs() <= gate.gate_fraction * period / 2.0 {
        SlotAssignment::Accepted(k as u64)
    } else {
        SlotAssignment::Rejected
    }
}

/// Paired key material after sifting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftedKey {
    pub slot_indices: Vec<u64>,
    pub alice_bits: Vec<u8>,
    pub bob_bits: Vec<u8>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.slot_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_indices.is_empty()
    }

    fn push(&mut self, slot: u64, alice: u8, bob: u8) {
        debug_assert!(self.slot_indices.last().map_or(true, |&s| s < slot));
        self.slot_indices.push(slot);
        self.alice_bits.push(alice);
        self.bob_bits.push(bob);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberEstimate {
    pub qber: f64,
    pub statistical_error: f64,
    pub errors: usize,
    pub bits: usize,
}

impl QberEstimate {
    pub fn from_counts(errors: usize, bits: usize) -> Result<Self> {
        if bits == 0 {
            return Err(Error::EmptyKey);
        }
        let q = errors as f64 / bits as f64;
        Ok(Self {
            qber: q,
            statistical_error: (q * (1.0 - q) / bits as f64).sqrt(),
            errors,
            bits,
        })
    }
}

/// Mismatch fraction between Bob's bits and the ground-truth Alice bits.
pub fn compute_qber(sifted: &SiftedKey) -> Result<QberEstimate> {
    let errors = sifted
        .alice_bits
        .iter()
        .zip(&sifted.bob_bits)
        .filter(|(a, b)| a != b)
        .count();
    QberEstimate::from_counts(errors, sifted.len())
}

/// Fate of one signal click in the ground-truth ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDetection {
    pub detector_id: u8,
    pub timestamp_ps: f64,
    /// False if the click fell in the detector's dead time (or before t = 0).
    pub registered: bool,
    pub accepted_by_gate: bool,
    /// Slot the click was attributed to, when accepted.
    pub assigned_slot: Option<u64>,
}

/// Ground truth for a slot in which at least one photon reached Bob.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot_index: u64,
    pub alice_bit: u8,
    pub photons_emitted: u32,
    pub photons_arrived: u32,
    pub detections: Vec<SlotDetection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub clock_hz: f64,
    pub length_km: f64,
    pub channel_mode: ChannelMode,
    pub profile_name: String,
    pub slots_simulated: u64,
    pub detected_rate_cps: [f64; 2],
    pub total_detected_rate_cps: f64,
    pub sift_rate_bps: f64,
    pub sifted_bits: usize,
    pub errors: usize,
    /// `None` when nothing was sifted.
    pub qber: Option<f64>,
    pub statistical_error_qber: Option<f64>,
    pub net_rate_bps: f64,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "profile            {}", self.profile_name)?;
        writeln!(f, "clock_hz           {}", self.clock_hz)?;
        writeln!(
            f,
            "length_km          {} ({})",
            self.length_km,
            self.channel_mode.as_str()
        )?;
        writeln!(f, "slots_simulated    {}", self.slots_simulated)?;
        writeln!(
            f,
            "detected_rate_cps  {:.1} + {:.1} = {:.1}",
            self.detected_rate_cps[0], self.detected_rate_cps[1], self.total_detected_rate_cps
        )?;
        writeln!(f, "sifted_bits        {}", self.sifted_bits)?;
        writeln!(f, "sift_rate_bps      {:.1}", self.sift_rate_bps)?;
        match (self.qber, self.statistical_error_qber) {
            (Some(q), Some(e)) => writeln!(f, "qber               {q:.5} +/- {e:.5}")?,
            _ => writeln!(f, "qber               n/a (empty sifted key)")?,
        }
        write!(f, "net_rate_bps       {:.1}", self.net_rate_bps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub n_slots: u64,
    pub seed: u64,
    /// Keep the per-slot ground-truth ledger (memory grows with photon count).
    pub record_slots: bool,
}

#[derive(Debug, Clone)]
pub struct LinkRun {
    pub summary: RunSummary,
    pub sifted: SiftedKey,
    /// Slots with at least one arriving photon, in slot order. Empty unless
    /// `record_slots` was set.
    pub records: Vec<SlotRecord>,
}

/// Photons per slot that reach Bob, conditioned on at least one.
struct ArrivalLaw {
    /// Probability that a slot has at least one arriving photon.
    p_any: f64,
    mean_arrived: f64,
    mean_lost: f64,
    single_photon: bool,
}

impl ArrivalLaw {
    fn new(link: &LinkConfig) -> Self {
        let t = channel_transmittance(&link.channel);
        if link.single_photon_pulses {
            Self {
                p_any: t,
                mean_arrived: t,
                mean_lost: 0.0,
                single_photon: true,
            }
        } else {
            let mu = link.source.mean_photon_number;
            let m = mu * t;
            Self {
                p_any: -(-m).exp_m1(),
                mean_arrived: m,
                mean_lost: mu * (1.0 - t),
                single_photon: false,
            }
        }
    }

    /// (arrived, emitted) for a slot known to have arrivals.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        if self.single_photon {
            return (1, 1);
        }
        // Zero-truncated Poisson by inversion.
        let m = self.mean_arrived;
        let mut u: f64 = rng.random::<f64>() * self.p_any;
        let mut k = 1u32;
        let mut pk = (-m).exp() * m;
        while u > pk && k < 1000 {
            u -= pk;
            k += 1;
            pk *= m / f64::from(k);
        }
        // Lost photons are an independent Poisson thinning branch.
        let lost = if self.mean_lost > 0.0 {
            Poisson::new(self.mean_lost).expect("positive mean").sample(rng) as u32
        } else {
            0
        };
        (k, k + lost)
    }
}

/// Simulates `n_slots` clock periods of the link.
///
/// Slots with no photon reaching Bob are skipped in one geometric draw;
/// photon arrivals per slot are Poisson with mean `mu * transmittance`
/// (Poisson thinning), so this is distributionally the same as drawing and
/// propagating every pulse. The detector response is evaluated at the
/// analytic per-arm detected rate.
pub fn run_link(link: &LinkConfig, opts: RunOptions) -> Result<LinkRun> {
    link.validate()?;
    if opts.n_slots == 0 {
        return Err(Error::InvalidConfig("n_slots must be >= 1".into()));
    }
    let period = link.source.slot_ps();
    let duration_ps = opts.n_slots as f64 * period;
    let alice_key = splitmix64(opts.seed ^ 0xA11C_E000_0000_0000);

    let rates = analytic_rates(link);
    let response = link.detector.response_at(rates.per_arm_detected_cps);
    let emit_sigma = emitter_pulse_fwhm(&link.source) / FWHM_PER_SIGMA;
    let chan_sigma = channel_broadening_fwhm(&link.channel) / FWHM_PER_SIGMA;
    let sync_sigma = link.sync_fwhm_ps / FWHM_PER_SIGMA;
    let eff = [link.detector.efficiency; 2];

    let law = ArrivalLaw::new(link);
    let mut rng = sub_stream(opts.seed, Stream::Photons);
    let mut arm_events: [Vec<DetectionEvent>; 2] = [Vec::new(), Vec::new()];
    let mut records = Vec::new();

    if law.p_any > 0.0 {
        let skip = Geometric::new(law.p_any.min(1.0)).expect("probability in (0, 1]");
        let mut slot = 0u64;
        loop {
            slot = slot.saturating_add(skip.sample(&mut rng));
            if slot >= opts.n_slots {
                break;
            }
            let bit = slot_bit(alice_key, slot);
            let pol = encode_bit(bit);
            let (arrived, emitted) = law.sample(&mut rng);
            let mut detections = Vec::new();
            for _ in 0..arrived {
                if let B92Outcome::Conclusive { bit: arm } = measure_b92(pol, eff, &mut rng) {
                    let emit: f64 = StandardNormal.sample(&mut rng);
                    let chan: f64 = StandardNormal.sample(&mut rng);
                    let sync: f64 = StandardNormal.sample(&mut rng);
                    let arrival = slot as f64 * period + emit * emit_sigma + chan * chan_sigma + sync * sync_sigma;
                    let t = arrival + response.sample_offset(&mut rng);
                    arm_events[usize::from(arm)].push(DetectionEvent {
                        detector_id: arm,
                        timestamp_ps: t,
                        origin: Origin::Signal { slot },
                    });
                    if opts.record_slots {
                        detections.push(SlotDetection {
                            detector_id: arm,
                            timestamp_ps: t,
                            registered: false,
                            accepted_by_gate: false,
                            assigned_slot: None,
                        });
                    }
                }
            }
            if opts.record_slots {
                records.push(SlotRecord {
                    slot_index: slot,
                    alice_bit: bit,
                    photons_emitted: emitted,
                    photons_arrived: arrived,
                    detections,
                });
            }
            slot += 1;
        }
    }

    let dark_streams = [Stream::DarkArm0, Stream::DarkArm1];
    let mut registered: Vec<DetectionEvent> = Vec::new();
    let mut detected = [0usize; 2];
    for (arm, events) in arm_events.iter_mut().enumerate() {
        let mut dark_rng = sub_stream(opts.seed, dark_streams[arm]);
        events.extend(generate_dark_counts(
            link.detector.dark_cps,
            duration_ps,
            arm as u8,
            &mut dark_rng,
        ));
        events.retain(|e| e.timestamp_ps >= 0.0);
        events.sort_by(|a, b| a.timestamp_ps.total_cmp(&b.timestamp_ps));
        let kept = apply_dead_time(events, link.detector.dead_time_ns)?;
        detected[arm] = kept.len();
        registered.extend(kept);
    }
    registered.sort_by(|a, b| a.timestamp_ps.total_cmp(&b.timestamp_ps));

    let mut sifted = SiftedKey::default();
    let mut pending: Option<(u64, u8, usize)> = None; // slot, arm, accepted clicks
    let flush = |p: Option<(u64, u8, usize)>, sifted: &mut SiftedKey| {
        if let Some((slot, arm, 1)) = p {
            sifted.push(slot, slot_bit(alice_key, slot), arm);
        }
    };
    for ev in &registered {
        let assigned = match assign_slot(ev.timestamp_ps, link.source.clock_hz, &link.gate) {
            SlotAssignment::Accepted(k) if k < opts.n_slots => Some(k),
            _ => None,
        };
        if opts.record_slots {
            if let Origin::Signal { slot } = ev.origin {
                mark_detection(&mut records, slot, ev, assigned);
            }
        }
        let Some(k) = assigned else { continue };
        match &mut pending {
            Some((slot, _, count)) if *slot == k => *count += 1,
            _ => {
                flush(pending.take(), &mut sifted);
                pending = Some((k, ev.detector_id, 1));
            }
        }
    }
    flush(pending.take(), &mut sifted);

    let duration_s = duration_ps * 1e-12;
    let estimate = compute_qber(&sifted).ok();
    let sift_rate_bps = sifted.len() as f64 / duration_s;
    let summary = RunSummary {
        clock_hz: link.source.clock_hz,
        length_km: link.channel.length_km,
        channel_mode: link.channel.mode,
        profile_name: link.detector.name.clone(),
        slots_simulated: opts.n_slots,
        detected_rate_cps: [detected[0] as f64 / duration_s, detected[1] as f64 / duration_s],
        total_detected_rate_cps: (detected[0] + detected[1]) as f64 / duration_s,
        sift_rate_bps,
        sifted_bits: sifted.len(),
        errors: estimate.map_or(0, |e| e.errors),
        qber: estimate.map(|e| e.qber),
        statistical_error_qber: estimate.map(|e| e.statistical_error),
        net_rate_bps: estimate.map_or(0.0, |e| net_rate(sift_rate_bps, e.qber, &link.security)),
    };
    Ok(LinkRun {
        summary,
        sifted,
        records,
    })
}

fn mark_detection(records: &mut [SlotRecord], slot: u64, ev: &DetectionEvent, assigned: Option<u64>) {
    let Ok(i) = records.binary_search_by_key(&slot, |r| r.slot_index) else {
        return;
    };
    if let Some(d) = records[i]
        .detections
        .iter_mut()
        .find(|d| d.detector_id == ev.detector_id && d.timestamp_ps == ev.timestamp_ps)
    {
        d.registered = true;
        d.accepted_by_gate = assigned.is_some();
        d.assigned_slot = assigned;
    }
}

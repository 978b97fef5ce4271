//! Alice's attenuated polarization-encoded source and the fibre channel.
//!
//! Emission model: each slot carries a pulse centred on the slot midpoint
//! whose photon number is Poisson with mean `mean_photon_number`. The pulse
//! width grows with clock rate as the laser and driver bandwidth limit is
//! approached, `base * sqrt(1 + (f / f_bw)^2)`. The channel removes photons
//! independently (Beer-Lambert loss) and, in fibre mode, adds a Gaussian
//! broadening proportional to length.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polarization angle (degrees) used for bit 0.
pub const POL_BIT0_DEG: f64 = 0.0;
/// Polarization angle (degrees) used for bit 1, 45 degrees from bit 0.
pub const POL_BIT1_DEG: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSpec {
    pub clock_hz: f64,
    /// Mean photon number per pulse.
    pub mean_photon_number: f64,
    /// Informational only.
    pub wavelength_nm: f64,
    /// Informational only; the sync channel is modelled as a timing reference.
    pub sync_wavelength_nm: f64,
    /// Emitted pulse FWHM at low clock rate.
    pub base_pulse_fwhm_ps: f64,
    /// 3 dB bandwidth of laser plus drive electronics.
    pub emitter_bandwidth_hz: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            clock_hz: 2e9,
            mean_photon_number: 0.1,
            wavelength_nm: 850.0,
            sync_wavelength_nm: 1300.0,
            base_pulse_fwhm_ps: 100.0,
            emitter_bandwidth_hz: 5e9,
        }
    }
}

impl SourceSpec {
    /// Slot duration in picoseconds.
    pub fn slot_ps(&self) -> f64 {
        1e12 / self.clock_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(Error::InvalidConfig("clock_hz must be > 0".into()));
        }
        if !(self.mean_photon_number.is_finite() && self.mean_photon_number >= 0.0) {
            return Err(Error::InvalidConfig("mean_photon_number must be >= 0".into()));
        }
        if !(self.base_pulse_fwhm_ps.is_finite() && self.base_pulse_fwhm_ps > 0.0) {
            return Err(Error::InvalidConfig("base_pulse_fwhm_ps must be > 0".into()));
        }
        if !(self.emitter_bandwidth_hz.is_finite() && self.emitter_bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig("emitter_bandwidth_hz must be > 0".into()));
        }
        if self.slot_ps() <= self.base_pulse_fwhm_ps {
            return Err(Error::InvalidConfig(format!(
                "base_pulse_fwhm_ps ({} ps) must be shorter than the slot ({} ps at clock_hz = {})",
                self.base_pulse_fwhm_ps,
                self.slot_ps(),
                self.clock_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    /// Real fibre: loss plus dispersion broadening.
    #[serde(rename = "fiber")]
    FullFiber,
    /// Bulk attenuator set to the loss of the named length; no broadening.
    #[serde(rename = "attenuator")]
    AttenuatorOnly,
}

impl ChannelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::FullFiber => "fiber",
            ChannelMode::AttenuatorOnly => "attenuator",
        }
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fiber" | "fibre" => Ok(ChannelMode::FullFiber),
            "attenuator" => Ok(ChannelMode::AttenuatorOnly),
            other => Err(Error::InvalidConfig(format!(
                "mode must be \"fiber\" or \"attenuator\", got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub length_km: f64,
    pub atten_db_per_km: f64,
    /// Gaussian FWHM broadening per km of fibre (chromatic and residual
    /// modal dispersion lumped together).
    pub broadening_ps_per_km: f64,
    pub mode: ChannelMode,
    /// Fixed insertion loss (receiver optics, couplers, connectors).
    pub excess_loss_db: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            length_km: 6.55,
            atten_db_per_km: 2.2,
            broadening_ps_per_km: 30.0,
            mode: ChannelMode::FullFiber,
            excess_loss_db: 8.0,
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("length_km", self.length_km),
            ("atten_db_per_km", self.atten_db_per_km),
            ("broadening_ps_per_km", self.broadening_ps_per_km),
            ("excess_loss_db", self.excess_loss_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{key} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Total loss in dB.
    pub fn loss_db(&self) -> f64 {
        self.atten_db_per_km * self.length_km + self.excess_loss_db
    }
}

/// One pulse leaving Alice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmittedPulse {
    pub slot_index: u64,
    pub bit: u8,
    pub pol_angle_deg: f64,
    pub photon_count: u32,
    pub pulse_fwhm_ps: f64,
}

impl EmittedPulse {
    pub fn new(slot_index: u64, bit: u8, photon_count: u32, pulse_fwhm_ps: f64) -> Self {
        Self {
            slot_index,
            bit,
            pol_angle_deg: encode_bit(bit),
            photon_count,
            pulse_fwhm_ps,
        }
    }
}

/// What reaches Bob's receiver from one pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagated {
    pub photon_count: u32,
    pub channel_broadening_fwhm_ps: f64,
}

/// Polarization angle for a bit: 0 -> 0 deg, 1 -> 45 deg.
///
/// # Panics
/// If `bit` is not 0 or 1.
pub fn encode_bit(bit: u8) -> f64 {
    match bit {
        0 => POL_BIT0_DEG,
        1 => POL_BIT1_DEG,
        _ => panic!("bit must be 0 or 1, got {bit}"),
    }
}

/// Photon number of one attenuated laser pulse.
pub fn draw_photon_number<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u32 {
    debug_assert!(mu >= 0.0);
    if mu <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mu).expect("mu > 0 and finite");
    poisson.sample(rng) as u32
}

/// Effective emitted pulse FWHM at the source's clock rate.
pub fn emitter_pulse_fwhm(source: &SourceSpec) -> f64 {
    let ratio = source.clock_hz / source.emitter_bandwidth_hz;
    source.base_pulse_fwhm_ps * (1.0 + ratio * ratio).sqrt()
}

/// Probability that a single photon survives the channel.
pub fn channel_transmittance(channel: &ChannelSpec) -> f64 {
    10f64.powf(-channel.loss_db() / 10.0)
}

/// Dispersion broadening contributed by the channel; exactly zero in
/// attenuator mode.
pub fn channel_broadening_fwhm(channel: &ChannelSpec) -> f64 {
    match channel.mode {
        ChannelMode::FullFiber => channel.broadening_ps_per_km * channel.length_km,
        ChannelMode::AttenuatorOnly => 0.0,
    }
}

/// Sends a pulse through the channel: each photon survives independently.
pub fn propagate<R: Rng + ?Sized>(pulse: &EmittedPulse, channel: &ChannelSpec, rng: &mut R) -> Propagated {
    let t = channel_transmittance(channel);
    let photon_count = if pulse.photon_count == 0 {
        0
    } else {
        Binomial::new(u64::from(pulse.photon_count), t.clamp(0.0, 1.0))
            .expect("transmittance in [0, 1]")
            .sample(rng) as u32
    };
    Propagated {
        photon_count,
        channel_broadening_fwhm_ps: channel_broadening_fwhm(channel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn encode_bit_maps_to_45_degree_pair() {
        assert_eq!(encode_bit(0), 0.0);
        assert_eq!(encode_bit(1), 45.0);
        assert_ne!(encode_bit(0), encode_bit(1));
    }

    #[test]
    #[should_panic(expected = "bit must be 0 or 1")]
    fn encode_bit_rejects_non_bits() {
        encode_bit(2);
    }

    #[test]
    fn zero_mean_source_is_vacuum() {
        let mut rng = stream(1);
        assert!((0..1000).all(|_| draw_photon_number(0.0, &mut rng) == 0));
    }

    #[test]
    fn photon_number_mean_and_multiphoton_fraction() {
        let mut rng = stream(2);
        let n = 1_000_000;
        let mut sum = 0u64;
        let mut nonzero = 0u64;
        let mut multi = 0u64;
        for _ in 0..n {
            let k = draw_photon_number(0.1, &mut rng);
            sum += u64::from(k);
            nonzero += u64::from(k >= 1);
            multi += u64::from(k >= 2);
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 0.1).abs() < 0.001, "mean = {mean}");

        // Closed form: 1 - mu e^-mu / (1 - e^-mu) at mu = 0.1.
        let expected = 0.049_167_5;
        let frac = multi as f64 / nonzero as f64;
        // ~95k non-empty pulses; binomial sigma ~0.0007
        assert!((frac - expected).abs() < 0.003, "P(n>=2|n>=1) = {frac}");
    }

    #[test]
    fn photon_number_histogram_matches_poisson() {
        let mu = 0.1;
        let n = 1_000_000usize;
        let mut rng = stream(3);
        let mut counts = [0usize; 3];
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let k = draw_photon_number(mu, &mut rng);
            if (k as usize) < 3 {
                counts[k as usize] += 1;
            }
            sum_sq += f64::from(k * k);
        }
        let mut fact = 1.0;
        for (k, &c) in counts.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            let p = (-mu).exp() * mu.powi(k as i32) / fact;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - n as f64 * p).abs() < 3.0 * sigma + 1.0,
                "k = {k}: {c} vs {}",
                n as f64 * p
            );
        }
        // E[k^2] = mu + mu^2
        let m2 = sum_sq / n as f64;
        assert!((m2 - 0.11).abs() < 0.0015, "second moment {m2}");
    }

    #[test]
    fn emitter_width_limits() {
        let mut s = SourceSpec {
            clock_hz: 1e3,
            base_pulse_fwhm_ps: 80.0,
            emitter_bandwidth_hz: 5e9,
            ..SourceSpec::default()
        };
        assert!((emitter_pulse_fwhm(&s) - 80.0).abs() < 1e-9);
        s.clock_hz = 5e9;
        assert!((emitter_pulse_fwhm(&s) - 80.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn transmittance_spot_values() {
        let mut c = ChannelSpec {
            length_km: 0.0,
            excess_loss_db: 0.0,
            ..ChannelSpec::default()
        };
        assert_eq!(channel_transmittance(&c), 1.0);
        c.length_km = 6.55;
        c.atten_db_per_km = 2.2;
        assert!((channel_transmittance(&c) - 0.0362).abs() < 5e-5);
        c.length_km = 10.0;
        c.atten_db_per_km = 1.0;
        c.excess_loss_db = 3.0;
        assert!((channel_transmittance(&c) - 0.0501).abs() < 5e-5);
    }

    #[test]
    fn vacuum_pulses_stay_empty() {
        let mut rng = stream(4);
        for mode in [ChannelMode::FullFiber, ChannelMode::AttenuatorOnly] {
            let ch = ChannelSpec {
                mode,
                ..ChannelSpec::default()
            };
            let out = propagate(&EmittedPulse::new(0, 0, 0, 100.0), &ch, &mut rng);
            assert_eq!(out.photon_count, 0);
        }
    }

    #[test]
    fn attenuator_mode_has_no_broadening() {
        for length_km in [0.0, 1.0, 6.55, 100.0] {
            let ch = ChannelSpec {
                length_km,
                mode: ChannelMode::AttenuatorOnly,
                ..ChannelSpec::default()
            };
            assert_eq!(channel_broadening_fwhm(&ch), 0.0);
        }
        let ch = ChannelSpec {
            length_km: 6.55,
            ..ChannelSpec::default()
        };
        assert!((channel_broadening_fwhm(&ch) - 196.5).abs() < 1e-9);
    }

    #[test]
    fn single_photon_survivors_follow_binomial() {
        let ch = ChannelSpec {
            length_km: 6.55,
            atten_db_per_km: 2.2,
            excess_loss_db: 0.0,
            ..ChannelSpec::default()
        };
        let mut rng = stream(5);
        let pulse = EmittedPulse::new(0, 1, 1, 100.0);
        let survivors: u32 = (0..1_000_000)
            .map(|_| propagate(&pulse, &ch, &mut rng).photon_count)
            .sum();
        assert!((f64::from(survivors) - 36_200.0).abs() < 600.0, "{survivors}");
    }

    #[test]
    fn attenuator_and_dispersionless_fibre_agree_per_seed() {
        let fibre = ChannelSpec {
            broadening_ps_per_km: 0.0,
            ..ChannelSpec::default()
        };
        let atten = ChannelSpec {
            mode: ChannelMode::AttenuatorOnly,
            ..ChannelSpec::default()
        };
        let mut a = stream(6);
        let mut b = stream(6);
        for slot in 0..10_000 {
            let pulse = EmittedPulse::new(slot, (slot % 2) as u8, 3, 100.0);
            assert_eq!(propagate(&pulse, &fibre, &mut a), propagate(&pulse, &atten, &mut b));
        }
    }

    #[test]
    fn validation_rejects_oversized_pulses() {
        let s = SourceSpec {
            clock_hz: 2e9,
            base_pulse_fwhm_ps: 600.0,
            ..SourceSpec::default()
        };
        assert!(s.validate().is_err());
        assert!(SourceSpec::default().validate().is_ok());
        let c = ChannelSpec {
            length_km: -1.0,
            ..ChannelSpec::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("length_km"));
    }

    proptest! {
        #[test]
        fn loss_composes_multiplicatively(l1 in 0.0f64..50.0, l2 in 0.0f64..50.0, a in 0.0f64..5.0) {
            let ch = |l| ChannelSpec { length_km: l, atten_db_per_km: a, excess_loss_db: 0.0, ..ChannelSpec::default() };
            let joint = channel_transmittance(&ch(l1 + l2));
            let split = channel_transmittance(&ch(l1)) * channel_transmittance(&ch(l2));
            prop_assert!((joint - split).abs() <= 1e-12 * joint.max(1e-300) + 1e-300);
        }

        #[test]
        fn emitter_width_monotone_in_clock(f in 1e6f64..2e10, base in 1.0f64..400.0, bw in 1e8f64..5e10) {
            let s = SourceSpec { clock_hz: f, base_pulse_fwhm_ps: base, emitter_bandwidth_hz: bw, ..SourceSpec::default() };
            let d = SourceSpec { clock_hz: 2.0 * f, ..s.clone() };
            prop_assert!(emitter_pulse_fwhm(&d) >= emitter_pulse_fwhm(&s));
            prop_assert!(emitter_pulse_fwhm(&s) >= base);
        }
    }
}

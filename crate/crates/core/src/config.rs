//! Full simulator configuration.
//!
//! [`SimConfig`] is the file-level form: every section has documented
//! defaults, unknown keys are rejected, and detector profiles can be
//! overridden or added by name. [`LinkConfig`] is the resolved form the
//! engines consume, with exactly one detector profile selected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorProfile, JitterTable, DEFAULT_DARK_CPS, DEFAULT_DEAD_TIME_NS, DEFAULT_EFFICIENCY};
use crate::error::{Error, Result};
use crate::photonics::{ChannelMode, ChannelSpec, SourceSpec};
use crate::postproc::SecurityParams;
use crate::protocol::GateSpec;

/// Device parameters shared by both receiver arms, plus the profile in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub profile: String,
    pub efficiency: f64,
    pub dark_cps: f64,
    pub dead_time_ns: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            profile: "enhanced".into(),
            efficiency: DEFAULT_EFFICIENCY,
            dark_cps: DEFAULT_DARK_CPS,
            dead_time_ns: DEFAULT_DEAD_TIME_NS,
        }
    }
}

/// Timing behaviour of a named detector module. For the built-ins every
/// field is optional and overrides the built-in value; a new profile must
/// give at least `jitter_table`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingProfile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter_table: Option<JitterTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroid_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_tau_ps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSpec {
    /// Jitter of the recovered clock reference, added to every timestamp.
    pub fwhm_ps: f64,
}

impl Default for SyncSpec {
    fn default() -> Self {
        Self { fwhm_ps: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub n_slots: u64,
    pub seed: u64,
    /// Replace Poisson pulses by exactly one photon per pulse.
    pub single_photon_pulses: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n_slots: 2_000_000,
            seed: 1,
            single_photon_pulses: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub name: String,
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    pub detector: DetectorSection,
    pub profiles: BTreeMap<String, TimingProfile>,
    pub gate: GateSpec,
    pub sync: SyncSpec,
    pub simulation: SimulationSpec,
    pub security: SecurityParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            source: SourceSpec::default(),
            channel: ChannelSpec::default(),
            detector: DetectorSection::default(),
            profiles: BTreeMap::new(),
            gate: GateSpec::default(),
            sync: SyncSpec::default(),
            simulation: SimulationSpec::default(),
            security: SecurityParams::default(),
        }
    }
}

impl SimConfig {
    /// Parses TOML text. Missing keys take defaults; unknown keys and
    /// invariant violations are errors naming the key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every profile name this configuration can resolve, built-ins first.
    pub fn profile_names(&self) -> Vec<String> {
        let mut names = vec!["standard".to_string(), "enhanced".to_string()];
        names.extend(
            self.profiles
                .keys()
                .filter(|k| !names.contains(k))
                .cloned()
                .collect::<Vec<_>>(),
        );
        names
    }

    /// Resolves a named profile: built-in or custom timing, overrides
    /// applied, then the shared device parameters.
    pub fn profile(&self, name: &str) -> Result<DetectorProfile> {
        let overrides = self.profiles.get(name);
        let mut p = match DetectorProfile::builtin_named(name) {
            Some(p) => p,
            None => {
                let table = overrides
                    .and_then(|o| o.jitter_table.clone())
                    .ok_or_else(|| Error::UnknownProfile(name.to_string()))?;
                DetectorProfile {
                    name: name.to_string(),
                    jitter_table: table,
                    centroid_alpha: 0.0,
                    tail_fraction: 0.0,
                    tail_tau_ps: 0.0,
                    ..DetectorProfile::enhanced()
                }
            }
        };
        if let Some(o) = overrides {
            if let Some(t) = &o.jitter_table {
                p.jitter_table = t.clone();
            }
            if let Some(v) = o.centroid_alpha {
                p.centroid_alpha = v;
            }
            if let Some(v) = o.tail_fraction {
                p.tail_fraction = v;
            }
            if let Some(v) = o.tail_tau_ps {
                p.tail_tau_ps = v;
            }
        }
        p.efficiency = self.detector.efficiency;
        p.dark_cps = self.detector.dark_cps;
        p.dead_time_ns = self.detector.dead_time_ns;
        p.validate()
            .map_err(|e| Error::InvalidConfig(format!("profiles.{name}: {e}")))?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.gate.validate()?;
        self.security.validate()?;
        if !(self.sync.fwhm_ps.is_finite() && self.sync.fwhm_ps >= 0.0) {
            return Err(Error::InvalidConfig("fwhm_ps must be >= 0".into()));
        }
        if self.simulation.n_slots == 0 {
            return Err(Error::InvalidConfig("n_slots must be >= 1".into()));
        }
        for name in self.profile_names() {
            self.profile(&name)?;
        }
        self.profile(&self.detector.profile)?;
        Ok(())
    }

    /// The engine view using the configured profile.
    pub fn link(&self) -> Result<LinkConfig> {
        self.link_with(&self.detector.profile, self.channel.mode)
    }

    /// The engine view with a given profile and channel mode.
    pub fn link_with(&self, profile: &str, mode: ChannelMode) -> Result<LinkConfig> {
        let link = LinkConfig {
            source: self.source.clone(),
            channel: ChannelSpec {
                mode,
                ..self.channel.clone()
            },
            detector: self.profile(profile)?,
            gate: self.gate.clone(),
            sync_fwhm_ps: self.sync.fwhm_ps,
            single_photon_pulses: self.simulation.single_photon_pulses,
            security: self.security.clone(),
        };
        link.validate()?;
        Ok(link)
    }

    /// Copy with every built-in and custom profile spelled out in full, for
    /// echoing the effective configuration.
    pub fn resolved(&self) -> Result<SimConfig> {
        let mut out = self.clone();
        out.profiles.clear();
        for name in self.profile_names() {
            let p = self.profile(&name)?;
            out.profiles.insert(
                name,
                TimingProfile {
                    jitter_table: Some(p.jitter_table),
                    centroid_alpha: Some(p.centroid_alpha),
                    tail_fraction: Some(p.tail_fraction),
                    tail_tau_ps: Some(p.tail_tau_ps),
                },
            );
        }
        Ok(out)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }
}

/// Resolved configuration for one link: a single detector profile on both
/// receiver arms.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    pub detector: DetectorProfile,
    pub gate: GateSpec,
    pub sync_fwhm_ps: f64,
    pub single_photon_pulses: bool,
    pub security: SecurityParams,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        self.gate.validate()?;
        self.security.validate()?;
        if !(self.sync_fwhm_ps.is_finite() && self.sync_fwhm_ps >= 0.0) {
            return Err(Error::InvalidConfig("fwhm_ps must be >= 0".into()));
        }
        Ok(())
    }

    /// Photons per pulse leaving Alice.
    pub fn photons_per_pulse(&self) -> f64 {
        if self.single_photon_pulses {
            1.0
        } else {
            self.source.mean_photon_number
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = SimConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, SimConfig::default());
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg = SimConfig::default().resolved().unwrap();
        let text = cfg.to_toml_string();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            back.profile("enhanced").unwrap(),
            SimConfig::default().profile("enhanced").unwrap()
        );
    }

    #[test]
    fn enhanced_profile_resolves_with_builtin_table() {
        let cfg = SimConfig::from_toml_str("[source]\nclock_hz = 2e9\n[detector]\nprofile = \"enhanced\"\n").unwrap();
        let link = cfg.link().unwrap();
        let fwhm: Vec<f64> = link.detector.jitter_table.entries().iter().map(|e| e.1).collect();
        assert_eq!(fwhm.first(), Some(&370.0));
        assert_eq!(fwhm.last(), Some(&450.0));
        assert_eq!(link.source.clock_hz, 2e9);
    }

    #[test]
    fn gate_fraction_out_of_range_is_named() {
        let err = SimConfig::from_toml_str("[gate]\ngate_fraction = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("gate_fraction must be in (0,1]"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SimConfig::from_toml_str("[source]\nclock_mhz = 5\n").unwrap_err();
        assert!(err.to_string().contains("clock_mhz"), "{err}");
        let err = SimConfig::from_toml_str("colour = \"red\"\n").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn custom_profiles_and_overrides() {
        let text = r#"
[detector]
profile = "fast"
dark_cps = 40

[profiles.fast]
jitter_table = [[1e3, 50.0], [1e7, 60.0]]

[profiles.standard]
centroid_alpha = 0.0
"#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        let fast = cfg.link().unwrap().detector;
        assert_eq!(fast.name, "fast");
        assert_eq!(fast.dark_cps, 40.0);
        assert_eq!(cfg.profile("standard").unwrap().centroid_alpha, 0.0);
        assert!(SimConfig::from_toml_str("[detector]\nprofile = \"nope\"\n").is_err());
    }

    #[test]
    fn integer_literals_are_accepted_for_floats() {
        let cfg = SimConfig::from_toml_str("[source]\nclock_hz = 1000000000\n").unwrap();
        assert_eq!(cfg.source.clock_hz, 1e9);
    }
}

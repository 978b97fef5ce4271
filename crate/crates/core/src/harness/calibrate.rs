//! Fits the unpublished link parameters to measured QBER anchors.
//!
//! Coordinate descent on the closed-form model: each free parameter in turn
//! is line-searched over its bounds (coarse grid, then golden-section
//! refinement) while the others are held fixed. The objective is the sum of
//! squared anchor residuals, each scaled by its tolerance.

use crate::analytics::analytic_qber;
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::photonics::ChannelMode;
use crate::protocol::{run_link, RunOptions};

use super::sweep::run_seed;

/// A measured operating point the fit must reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub clock_hz: f64,
    pub length_km: f64,
    pub profile: String,
    pub target_qber: f64,
    pub tolerance: f64,
}

/// 17.8 % (standard module) and 6.6 % (enhanced module) at 2 GHz over
/// 6.55 km.
pub fn reference_anchors() -> Vec<Anchor> {
    let at = |profile: &str, target_qber, tolerance| Anchor {
        clock_hz: 2e9,
        length_km: 6.55,
        profile: profile.into(),
        target_qber,
        tolerance,
    };
    vec![at("standard", 0.178, 0.025), at("enhanced", 0.066, 0.015)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeParameter {
    BasePulseFwhmPs,
    EmitterBandwidthHz,
    SyncFwhmPs,
    GateFraction,
    DarkCps,
    CentroidAlpha,
}

impl FreeParameter {
    pub const ALL: [FreeParameter; 6] = [
        FreeParameter::BasePulseFwhmPs,
        FreeParameter::EmitterBandwidthHz,
        FreeParameter::SyncFwhmPs,
        FreeParameter::GateFraction,
        FreeParameter::DarkCps,
        FreeParameter::CentroidAlpha,
    ];

    pub fn key(self) -> &'static str {
        match self {
            FreeParameter::BasePulseFwhmPs => "source.base_pulse_fwhm_ps",
            FreeParameter::EmitterBandwidthHz => "source.emitter_bandwidth_hz",
            FreeParameter::SyncFwhmPs => "sync.fwhm_ps",
            FreeParameter::GateFraction => "gate.gate_fraction",
            FreeParameter::DarkCps => "detector.dark_cps",
            FreeParameter::CentroidAlpha => "profiles.standard.centroid_alpha",
        }
    }

    fn bounds(self) -> (f64, f64) {
        match self {
            FreeParameter::BasePulseFwhmPs => (10.0, 250.0),
            FreeParameter::EmitterBandwidthHz => (1e9, 5e10),
            FreeParameter::SyncFwhmPs => (0.0, 300.0),
            FreeParameter::GateFraction => (0.05, 1.0),
            FreeParameter::DarkCps => (10.0, 2000.0),
            FreeParameter::CentroidAlpha => (0.0, 2.0),
        }
    }

    /// Searched on a log scale.
    fn logarithmic(self) -> bool {
        matches!(self, FreeParameter::EmitterBandwidthHz | FreeParameter::DarkCps)
    }

    pub fn get(self, cfg: &SimConfig) -> f64 {
        match self {
            FreeParameter::BasePulseFwhmPs => cfg.source.base_pulse_fwhm_ps,
            FreeParameter::EmitterBandwidthHz => cfg.source.emitter_bandwidth_hz,
            FreeParameter::SyncFwhmPs => cfg.sync.fwhm_ps,
            FreeParameter::GateFraction => cfg.gate.gate_fraction,
            FreeParameter::DarkCps => cfg.detector.dark_cps,
            FreeParameter::CentroidAlpha => cfg.profile("standard").map(|p| p.centroid_alpha).unwrap_or(0.0),
        }
    }

    pub fn set(self, cfg: &mut SimConfig, v: f64) {
        match self {
            FreeParameter::BasePulseFwhmPs => cfg.source.base_pulse_fwhm_ps = v,
            FreeParameter::EmitterBandwidthHz => cfg.source.emitter_bandwidth_hz = v,
            FreeParameter::SyncFwhmPs => cfg.sync.fwhm_ps = v,
            FreeParameter::GateFraction => cfg.gate.gate_fraction = v,
            FreeParameter::DarkCps => cfg.detector.dark_cps = v,
            FreeParameter::CentroidAlpha => {
                cfg.profiles.entry("standard".into()).or_default().centroid_alpha = Some(v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub max_sweeps: usize,
    /// Slots per anchor for the Monte Carlo check; `None` skips it.
    pub monte_carlo_slots: Option<u64>,
    pub seed: u64,
    /// Name given to the fitted configuration.
    pub name: String,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 30,
            monte_carlo_slots: Some(1_000_000_000),
            seed: 1,
            name: "calibrated".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorResult {
    pub anchor: Anchor,
    pub analytic_qber: f64,
    /// `(qber, statistical error)`; `None` if skipped or nothing was sifted.
    pub monte_carlo: Option<(f64, f64)>,
}

impl AnchorResult {
    pub fn residual(&self) -> f64 {
        self.analytic_qber - self.anchor.target_qber
    }

    pub fn within_tolerance(&self) -> bool {
        self.residual().abs() <= self.anchor.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Best parameters found, whether or not the fit succeeded.
    pub fitted: SimConfig,
    /// Coordinate-descent sweeps performed; 0 if the start already fit.
    pub iterations: usize,
    pub objective: f64,
    pub anchors: Vec<AnchorResult>,
    pub success: bool,
}

impl CalibrationReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "calibration {} after {} sweep(s), objective {:.6}\n",
            if self.success { "succeeded" } else { "FAILED" },
            self.iterations,
            self.objective
        );
        for p in FreeParameter::ALL {
            s += &format!("  {:34} {}\n", p.key(), p.get(&self.fitted));
        }
        for a in &self.anchors {
            s += &format!(
                "  anchor {} @ {} Hz, {} km: target {:.4}, analytic {:.4} (residual {:+.4}, tol {})",
                a.anchor.profile,
                a.anchor.clock_hz,
                a.anchor.length_km,
                a.anchor.target_qber,
                a.analytic_qber,
                a.residual(),
                a.anchor.tolerance
            );
            match a.monte_carlo {
                Some((q, e)) => s += &format!(", monte carlo {q:.4} +/- {e:.4}\n"),
                None => s += "\n",
            }
        }
        s
    }
}

fn anchor_config(cfg: &SimConfig, a: &Anchor) -> SimConfig {
    let mut c = cfg.clone();
    c.source.clock_hz = a.clock_hz;
    c.channel.length_km = a.length_km;
    c
}

fn anchor_qber(cfg: &SimConfig, a: &Anchor) -> Result<f64> {
    let link = anchor_config(cfg, a).link_with(&a.profile, ChannelMode::FullFiber)?;
    analytic_qber(&link)
}

fn objective(cfg: &SimConfig, anchors: &[Anchor]) -> f64 {
    anchors
        .iter()
        .map(|a| match anchor_qber(cfg, a) {
            Ok(q) => ((q - a.target_qber) / a.tolerance).powi(2),
            Err(_) => f64::INFINITY,
        })
        .sum()
}

fn satisfied(cfg: &SimConfig, anchors: &[Anchor]) -> bool {
    anchors
        .iter()
        .all(|a| anchor_qber(cfg, a).is_ok_and(|q| (q - a.target_qber).abs() <= a.tolerance))
}

/// Minimizes the objective along one parameter.
fn line_search(cfg: &mut SimConfig, p: FreeParameter, anchors: &[Anchor]) -> f64 {
    let (lo, hi) = p.bounds();
    let log = p.logarithmic();
    let to = |x: f64| if log { x.ln() } else { x };
    let from = |u: f64| if log { u.exp() } else { u };
    let (a, b) = (to(lo), to(hi));
    let eval = |cfg: &mut SimConfig, u: f64| {
        p.set(cfg, from(u).clamp(lo, hi));
        objective(cfg, anchors)
    };

    let current = to(p.get(cfg).clamp(lo, hi));
    let mut best_u = current;
    let mut best = eval(cfg, current);
    const GRID: usize = 48;
    let step = (b - a) / GRID as f64;
    for i in 0..=GRID {
        let u = a + step * i as f64;
        let f = eval(cfg, u);
        if f < best {
            best = f;
            best_u = u;
        }
    }

    // golden-section refinement around the best grid point
    let (mut l, mut r) = ((best_u - step).max(a), (best_u + step).min(b));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = r - g * (r - l);
    let mut x2 = l + g * (r - l);
    let mut f1 = eval(cfg, x1);
    let mut f2 = eval(cfg, x2);
    for _ in 0..40 {
        if f1 < f2 {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - g * (r - l);
            f1 = eval(cfg, x1);
        } else {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + g * (r - l);
            f2 = eval(cfg, x2);
        }
    }
    for (u, f) in [(x1, f1), (x2, f2)] {
        if f < best {
            best = f;
            best_u = u;
        }
    }
    eval(cfg, best_u);
    best
}

/// Fits the free parameters of `base` to `anchors`.
///
/// Returns a report in every case where the model can be evaluated; check
/// [`CalibrationReport::success`]. A configuration that already meets every
/// anchor is returned unchanged with zero iterations.
pub fn calibrate(base: &SimConfig, anchors: &[Anchor], opts: &CalibrationOptions) -> Result<CalibrationReport> {
    if anchors.is_empty() {
        return Err(Error::Calibration("no anchors given".into()));
    }
    base.validate()?;
    let mut cfg = base.clone();
    let mut iterations = 0;
    let mut value = objective(&cfg, anchors);

    if !satisfied(&cfg, anchors) {
        while iterations < opts.max_sweeps {
            iterations += 1;
            let before = value;
            for p in FreeParameter::ALL {
                value = line_search(&mut cfg, p, anchors);
            }
            if before - value <= 1e-9 * before.max(1e-12) {
                break;
            }
        }
        cfg.name = opts.name.clone();
    }
    cfg.validate()
        .map_err(|e| Error::Calibration(format!("fit left the valid region: {e}")))?;

    let mut results = Vec::with_capacity(anchors.len());
    for a in anchors {
        let analytic = anchor_qber(&cfg, a)?;
        let monte_carlo = match opts.monte_carlo_slots {
            Some(n_slots) => {
                let link = anchor_config(&cfg, a).link_with(&a.profile, ChannelMode::FullFiber)?;
                let seed = run_seed(opts.seed, a.length_km, &a.profile, 0);
                let run = run_link(
                    &link,
                    RunOptions {
                        n_slots,
                        seed,
                        record_slots: false,
                    },
                )?;
                run.summary.qber.zip(run.summary.statistical_error_qber)
            }
            None => None,
        };
        results.push(AnchorResult {
            anchor: a.clone(),
            analytic_qber: analytic,
            monte_carlo,
        });
    }
    let success = results.iter().all(AnchorResult::within_tolerance);
    Ok(CalibrationReport {
        fitted: cfg,
        iterations,
        objective: value,
        anchors: results,
        success,
    })
}

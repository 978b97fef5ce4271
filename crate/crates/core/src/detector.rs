//! Single-photon detector model for Bob's receiver.
//!
//! The timing response is a Gaussian whose FWHM depends on the count rate the
//! module is running at, read off a calibration table by log-linear
//! interpolation. At high rates the standard module also drifts late; the
//! drift is modelled as `centroid_alpha * (fwhm(rate) - fwhm(low rate))`.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FWHM of a Gaussian in units of its standard deviation, 2 sqrt(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Count-rate-indexed timing FWHM calibration, `(rate_cps, fwhm_ps)` pairs
/// strictly increasing in rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct JitterTable(Vec<(f64, f64)>);

impl JitterTable {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidConfig("jitter_table needs at least 2 entries".into()));
        }
        for (rate, fwhm) in &entries {
            if !(rate.is_finite() && *rate > 0.0) {
                return Err(Error::InvalidConfig("jitter_table rates must be > 0".into()));
            }
            if !(fwhm.is_finite() && *fwhm > 0.0) {
                return Err(Error::InvalidConfig("jitter_table fwhm values must be > 0".into()));
            }
        }
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(
                "jitter_table must be strictly increasing in rate".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.0
    }

    /// FWHM in the low-rate limit.
    pub fn low_rate_fwhm(&self) -> f64 {
        self.0[0].1
    }

    /// Piecewise-linear in log10(rate), clamped to the end values.
    pub fn fwhm_at(&self, rate_cps: f64) -> f64 {
        let (first, last) = (self.0[0], self.0[self.0.len() - 1]);
        if !(rate_cps > first.0) {
            return first.1;
        }
        if rate_cps >= last.0 {
            return last.1;
        }
        let lr = rate_cps.log10();
        let i = self.0.partition_point(|&(r, _)| r <= rate_cps);
        let (r0, f0) = self.0[i - 1];
        let (r1, f1) = self.0[i];
        let (l0, l1) = (r0.log10(), r1.log10());
        f0 + (f1 - f0) * (lr - l0) / (l1 - l0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for JitterTable {
    type Error = Error;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        JitterTable::new(v)
    }
}

impl From<JitterTable> for Vec<(f64, f64)> {
    fn from(t: JitterTable) -> Self {
        t.0
    }
}

/// A detector module: photon detection efficiency, noise, dead time and its
/// rate-dependent timing response.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorProfile {
    pub name: String,
    pub efficiency: f64,
    pub dark_cps: f64,
    pub dead_time_ns: f64,
    pub jitter_table: JitterTable,
    pub centroid_alpha: f64,
    pub tail_fraction: f64,
    pub tail_tau_ps: f64,
}

/// Low-rate anchor of the built-in tables.
pub const LOW_RATE_CPS: f64 = 1e3;
/// Count rate above which the unmodified module starts to broaden.
pub const BROADENING_ONSET_CPS: f64 = 5e5;
/// High-rate anchor of the built-in tables.
pub const HIGH_RATE_CPS: f64 = 2e6;

pub const DEFAULT_EFFICIENCY: f64 = 0.45;
pub const DEFAULT_DARK_CPS: f64 = 250.0;
pub const DEFAULT_DEAD_TIME_NS: f64 = 50.0;

impl DetectorProfile {
    /// Unmodified SPCM: 570 ps at low rate, 950 ps at 2 Mcps, with a
    /// centroid drift at high rate.
    pub fn standard() -> Self {
        Self::builtin("standard", [570.0, 570.0, 950.0], 0.5)
    }

    /// Module with the improved timing circuit: 370 ps at low rate, 450 ps
    /// at 2 Mcps, no centroid drift.
    pub fn enhanced() -> Self {
        Self::builtin("enhanced", [370.0, 370.0, 450.0], 0.0)
    }

    fn builtin(name: &str, fwhm: [f64; 3], centroid_alpha: f64) -> Self {
        let table = vec![
            (LOW_RATE_CPS, fwhm[0]),
            (BROADENING_ONSET_CPS, fwhm[1]),
            (HIGH_RATE_CPS, fwhm[2]),
        ];
        Self {
            name: name.to_string(),
            efficiency: DEFAULT_EFFICIENCY,
            dark_cps: DEFAULT_DARK_CPS,
            dead_time_ns: DEFAULT_DEAD_TIME_NS,
            jitter_table: JitterTable::new(table).expect("built-in table is valid"),
            centroid_alpha,
            tail_fraction: 0.0,
            tail_tau_ps: 0.0,
        }
    }

    /// Built-in profile by name.
    pub fn builtin_named(name: &str) -> Option<Self> {
        match name {
            "standard" => Some(Self::standard()),
            "enhanced" => Some(Self::enhanced()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidConfig("efficiency must be in (0,1]".into()));
        }
        if !(self.dark_cps.is_finite() && self.dark_cps >= 0.0) {
            return Err(Error::InvalidConfig("dark_cps must be >= 0".into()));
        }
        if !(self.dead_time_ns.is_finite() && self.dead_time_ns >= 0.0) {
            return Err(Error::InvalidConfig("dead_time_ns must be >= 0".into()));
        }
        if !(self.centroid_alpha.is_finite() && self.centroid_alpha >= 0.0) {
            return Err(Error::InvalidConfig("centroid_alpha must be >= 0".into()));
        }
        if !(self.tail_fraction >= 0.0 && self.tail_fraction < 1.0) {
            return Err(Error::InvalidConfig("tail_fraction must be in [0,1)".into()));
        }
        if !(self.tail_tau_ps.is_finite() && self.tail_tau_ps >= 0.0) {
            return Err(Error::InvalidConfig("tail_tau_ps must be >= 0".into()));
        }
        if self.tail_fraction > 0.0 && self.tail_tau_ps <= 0.0 {
            return Err(Error::InvalidConfig(
                "tail_tau_ps must be > 0 when tail_fraction > 0".into(),
            ));
        }
        Ok(())
    }

    /// Frozen timing response at a given operating rate.
    pub fn response_at(&self, rate_cps: f64) -> TimingResponse {
        TimingResponse {
            sigma_ps: jitter_fwhm_at(self, rate_cps) / FWHM_PER_SIGMA,
            shift_ps: centroid_shift_at(self, rate_cps),
            tail_fraction: self.tail_fraction,
            tail_tau_ps: self.tail_tau_ps,
        }
    }
}

/// Detector timing response at one operating point, ready for sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingResponse {
    pub sigma_ps: f64,
    pub shift_ps: f64,
    pub tail_fraction: f64,
    pub tail_tau_ps: f64,
}

impl TimingResponse {
    /// Delay added to the true arrival time. Draws a fixed number of variates
    /// whatever the parameters, so runs differing only in widths stay
    /// sample-by-sample comparable.
    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let z: f64 = StandardNormal.sample(rng);
        if u < self.tail_fraction {
            let e: f64 = Exp::new(1.0).expect("unit rate").sample(rng);
            self.shift_ps + e * self.tail_tau_ps
        } else {
            self.shift_ps + z * self.sigma_ps
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// A photon emitted in `slot`.
    Signal {
        slot: u64,
    },
    Dark,
}

/// One detector click. `origin` is ground truth for diagnostics; the protocol
/// never reads it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub detector_id: u8,
    pub timestamp_ps: f64,
    pub origin: Origin,
}

pub fn jitter_fwhm_at(profile: &DetectorProfile, rate_cps: f64) -> f64 {
    profile.jitter_table.fwhm_at(rate_cps)
}

pub fn centroid_shift_at(profile: &DetectorProfile, rate_cps: f64) -> f64 {
    profile.centroid_alpha * (jitter_fwhm_at(profile, rate_cps) - profile.jitter_table.low_rate_fwhm())
}

/// Timestamp reported by the detector for a photon arriving at
/// `true_arrival_ps` while the module runs at `rate_cps`.
pub fn sample_response_time<R: Rng + ?Sized>(
    profile: &DetectorProfile,
    rate_cps: f64,
    true_arrival_ps: f64,
    rng: &mut R,
) -> f64 {
    true_arrival_ps + profile.response_at(rate_cps).sample_offset(rng)
}

/// Malus-law click probability behind a linear analyzer.
pub fn click_probability(pol_angle_deg: f64, analyzer_angle_deg: f64, efficiency: f64) -> f64 {
    let c = (pol_angle_deg - analyzer_angle_deg).to_radians().cos();
    efficiency * c * c
}

/// Non-paralyzable dead time: an event is kept iff at least `dead_time_ns`
/// has elapsed since the last kept event on the same detector.
///
/// Events must be time-ordered per detector; different detectors may be
/// interleaved arbitrarily.
pub fn apply_dead_time(events: &[DetectionEvent], dead_time_ns: f64) -> Result<Vec<DetectionEvent>> {
    let dead_ps = dead_time_ns * 1e3;
    let mut last_seen = [f64::NEG_INFINITY; 256];
    let mut last_kept = [f64::NEG_INFINITY; 256];
    let mut kept = Vec::with_capacity(events.len());
    for ev in events {
        let d = usize::from(ev.detector_id);
        if ev.timestamp_ps < last_seen[d] {
            return Err(Error::Usage(format!(
                "events for detector {} are not sorted by timestamp ({} ps after {} ps)",
                ev.detector_id, ev.timestamp_ps, last_seen[d]
            )));
        }
        last_seen[d] = ev.timestamp_ps;
        if ev.timestamp_ps - last_kept[d] >= dead_ps {
            last_kept[d] = ev.timestamp_ps;
            kept.push(*ev);
        }
    }
    Ok(kept)
}

/// Homogeneous Poisson dark counts on one detector over `[0, duration_ps)`,
/// time-ordered.
pub fn generate_dark_counts<R: Rng + ?Sized>(
    dark_cps: f64,
    duration_ps: f64,
    detector_id: u8,
    rng: &mut R,
) -> Vec<DetectionEvent> {
    let mut out = Vec::new();
    if dark_cps <= 0.0 || duration_ps <= 0.0 {
        return out;
    }
    let gap = Exp::new(dark_cps * 1e-12).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < duration_ps {
        out.push(DetectionEvent {
            detector_id,
            timestamp_ps: t,
            origin: Origin::Dark,
        });
        t += gap.sample(rng);
    }
    out
}

/// FWHM of a sampled timing distribution, measured the way a TCSPC
/// histogram would be read: bin the samples, locate the peak (log-parabola
/// fit over the top of the histogram) and interpolate the half-maximum
/// crossings on either side.
///
/// Returns `None` for fewer than 100 samples or a degenerate histogram.
pub fn empirical_fwhm(samples: &[f64], bin_ps: f64) -> Option<f64> {
    if samples.len() < 100 || !(bin_ps > 0.0) {
        return None;
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nbins = ((hi - lo) / bin_ps).ceil() as usize + 1;
    if !(3..=50_000_000).contains(&nbins) {
        return None;
    }
    let mut hist = vec![0.0f64; nbins];
    for &s in samples {
        hist[((s - lo) / bin_ps) as usize] += 1.0;
    }
    let centre = |i: usize| lo + (i as f64 + 0.5) * bin_ps;

    let (imax, &cmax) = hist.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let mut top_lo = imax;
    while top_lo > 0 && hist[top_lo - 1] >= 0.7 * cmax {
        top_lo -= 1;
    }
    let mut top_hi = imax;
    while top_hi + 1 < nbins && hist[top_hi + 1] >= 0.7 * cmax {
        top_hi += 1;
    }
    let peak = if top_hi - top_lo >= 2 {
        let pts: Vec<(f64, f64)> = (top_lo..=top_hi)
            .map(|i| (centre(i) - centre(imax), hist[i].ln()))
            .collect();
        fit_parabola_max(&pts).map(f64::exp).unwrap_or(cmax)
    } else {
        cmax
    };
    let half = peak / 2.0;

    let mut left = imax;
    while left > 0 && hist[left] > half {
        left -= 1;
    }
    let mut right = imax;
    while right + 1 < nbins && hist[right] > half {
        right += 1;
    }
    if hist[left] > half || hist[right] > half {
        return None;
    }
    let cross = |a: usize, b: usize| {
        let (ya, yb) = (hist[a], hist[b]);
        let f = if yb == ya { 0.5 } else { (half - ya) / (yb - ya) };
        centre(a) + f * (centre(b) - centre(a))
    };
    Some(cross(right, right - 1) - cross(left, left + 1))
}

/// Least-squares parabola through `pts`; returns its maximum value.
fn fit_parabola_max(pts: &[(f64, f64)]) -> Option<f64> {
    let n = pts.len() as f64;
    let (mut sx, mut sx2, mut sx3, mut sx4, mut sy, mut sxy, mut sx2y) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let x2 = x * x;
        sx += x;
        sx2 += x2;
        sx3 += x2 * x;
        sx4 += x2 * x2;
        sy += y;
        sxy += x * y;
        sx2y += x2 * y;
    }
    // Normal equations for y = a + b x + c x^2, Cramer's rule.
    let m = [[n, sx, sx2], [sx, sx2, sx3], [sx2, sx3, sx4]];
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let rhs = [sy, sxy, sx2y];
    let solve = |col: usize| {
        let mut mm = m;
        for r in 0..3 {
            mm[r][col] = rhs[r];
        }
        det3(mm) / d
    };
    let (a, b, c) = (solve(0), solve(1), solve(2));
    if c >= 0.0 {
        return None;
    }
    Some(a - b * b / (4.0 * c))
}

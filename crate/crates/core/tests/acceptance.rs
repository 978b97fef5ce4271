//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use b92link::analytics::analytic_qber;
use b92link::detector::{empirical_fwhm, DetectorProfile, HIGH_RATE_CPS, LOW_RATE_CPS};
use b92link::harness::{
    calibrate, reference_anchors, run_seed, run_sweep, to_csv, CalibrationOptions, SweepSpec, SweepTable,
};
use b92link::postproc::{binary_entropy, privacy_amplify, reconcile};
use b92link::protocol::{run_link, RunOptions, RunSummary};
use b92link::rng::stream;
use b92link::{ChannelMode, LinkConfig, SimConfig};
use rand::Rng;

/// Slots per Monte Carlo point for the anchor and trend checks. Skipping
/// empty slots makes the cost proportional to photons, not slots.
const TREND_SLOTS: u64 = 1_000_000_000;
const ANCHOR_SLOTS: u64 = 4_000_000_000;
const WORKERS: usize = 8;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn link_at(cfg: &SimConfig, clock_hz: f64, length_km: f64, profile: &str, mode: ChannelMode) -> LinkConfig {
    let mut c = cfg.clone();
    c.source.clock_hz = clock_hz;
    c.channel.length_km = length_km;
    c.link_with(profile, mode).expect("valid link")
}

fn mc(link: &LinkConfig, n_slots: u64, seed: u64) -> RunSummary {
    run_link(
        link,
        RunOptions {
            n_slots,
            seed,
            record_slots: false,
        },
    )
    .expect("run succeeds")
    .summary
}

fn q(s: &RunSummary) -> (f64, f64) {
    (
        s.qber.unwrap_or(f64::NAN),
        s.statistical_error_qber.unwrap_or(f64::INFINITY),
    )
}

fn sweep(spec: SweepSpec) -> SweepTable {
    let mut spec = spec;
    spec.fixed.simulation.n_slots = TREND_SLOTS;
    run_sweep(&spec, WORKERS).expect("sweep runs")
}

fn anchors(fitted: &SimConfig) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (profile, target, tol) in [("enhanced", 0.066, 0.015), ("standard", 0.178, 0.025)] {
        let link = link_at(fitted, 2e9, 6.55, profile, ChannelMode::FullFiber);
        let start = Instant::now();
        let short = mc(&link, 2_000_000, run_seed(11, 6.55, profile, 0));
        let t_short = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let long = mc(&link, ANCHOR_SLOTS, run_seed(11, 6.55, profile, 1));
        let t_long = start.elapsed().as_secs_f64();
        let (qv, e) = q(&long);
        let ok = (qv - target).abs() <= tol && t_short <= 60.0;
        pass &= ok;
        lines.push(format!(
            "{profile} {qv:.4}+/-{e:.4} (target {target}+/-{tol}, {ANCHOR_SLOTS} slots in {t_long:.1}s; 2e6 slots {:.4} in {t_short:.2}s)",
            q(&short).0
        ));
    }
    Outcome::new(pass, lines.join("; "))
}

fn fig2_trend(table: &SweepTable) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &clock in &[1.0e9, 1.2e9, 1.4e9, 1.6e9, 1.8e9, 2.0e9] {
        let s = table.find(clock, "standard", ChannelMode::FullFiber).unwrap();
        let e = table.find(clock, "enhanced", ChannelMode::FullFiber).unwrap();
        let both = (s.qber_err.powi(2) + e.qber_err.powi(2)).sqrt();
        let mut ok = e.qber < s.qber + 3.0 * both && e.qber < 0.10 + 3.0 * e.qber_err;
        if clock == 2.0e9 {
            ok &= s.qber > 0.10 - 3.0 * s.qber_err;
        }
        pass &= ok;
        parts.push(format!("{:.1}GHz std {:.4} enh {:.4}", clock / 1e9, s.qber, e.qber));
    }
    Outcome::new(pass, parts.join(", "))
}

fn fig3_trend(table: &SweepTable) -> Outcome {
    let row = |l: f64, p: &str, m: ChannelMode| table.find(l, p, m).unwrap();
    let fib = ChannelMode::FullFiber;
    let att = ChannelMode::AttenuatorOnly;
    let lengths = [2.0, 4.2, 6.55, 10.0, 15.0];
    let mut enh_ok = true;
    for w in lengths.windows(2) {
        let (a, b) = (row(w[0], "enhanced", fib), row(w[1], "enhanced", fib));
        enh_ok &= b.qber >= a.qber - 3.0 * (a.qber_err.powi(2) + b.qber_err.powi(2)).sqrt();
    }
    let (s01, s2) = (row(0.1, "standard", fib), row(2.0, "standard", fib));
    let std_ok = s01.qber > s2.qber;
    let mut att_ok = true;
    for &l in &[0.1, 2.0, 4.2, 6.55, 10.0, 15.0] {
        for p in ["standard", "enhanced"] {
            let (a, f) = (row(l, p, att), row(l, p, fib));
            // common random numbers: the rows differ only in dispersion
            att_ok &= a.qber <= f.qber + 3.0 * f.qber_err.max(a.qber_err) * 0.5_f64.sqrt();
        }
    }
    let enh: Vec<String> = lengths
        .iter()
        .map(|&l| format!("{:.4}", row(l, "enhanced", fib).qber))
        .collect();
    Outcome::new(
        enh_ok && std_ok && att_ok,
        format!(
            "enhanced fibre beyond 2 km [{}] non-decreasing={enh_ok}; standard 0.1 km {:.4} > 2 km {:.4}: {std_ok}; attenuator <= fibre: {att_ok}",
            enh.join(", "),
            s01.qber,
            s2.qber
        ),
    )
}

fn net_rates(fitted: &SimConfig) -> Outcome {
    let s = mc(
        &link_at(fitted, 2e9, 6.55, "standard", ChannelMode::FullFiber),
        ANCHOR_SLOTS,
        21,
    );
    let e = mc(
        &link_at(fitted, 2e9, 6.55, "enhanced", ChannelMode::FullFiber),
        ANCHOR_SLOTS,
        22,
    );
    let pass = s.net_rate_bps == 0.0 && (10_000.0..=40_000.0).contains(&e.net_rate_bps);
    Outcome::new(
        pass,
        format!("standard {:.1} bps, enhanced {:.1} bps", s.net_rate_bps, e.net_rate_bps),
    )
}

fn operating_rate(fitted: &SimConfig) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &clock in &[1.0e9, 1.5e9, 2.0e9] {
        for p in ["standard", "enhanced"] {
            let s = mc(&link_at(fitted, clock, 2.0, p, ChannelMode::FullFiber), 200_000_000, 31);
            pass &= (0.5e6..=1.5e6).contains(&s.total_detected_rate_cps);
            parts.push(format!(
                "{:.1}GHz {p} {:.3} Mcps",
                clock / 1e9,
                s.total_detected_rate_cps / 1e6
            ));
        }
    }
    Outcome::new(pass, format!("2 km fibre: {}", parts.join(", ")))
}

fn oracle(fitted: &SimConfig) -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut pass = true;
    for &clock in &[1.0e9, 1.5e9, 2.0e9] {
        for &len in &[0.1, 6.55, 15.0] {
            for p in ["standard", "enhanced"] {
                let link = link_at(fitted, clock, len, p, ChannelMode::FullFiber);
                let predicted = analytic_qber(&link).expect("signal present");
                let (qv, e) = q(&mc(&link, 200_000_000, run_seed(41, clock + len, p, 0)));
                let gap = (predicted - qv).abs();
                let bound = 0.02f64.max(3.0 * e);
                pass &= gap <= bound;
                if gap / bound > worst.0 {
                    worst = (
                        gap / bound,
                        format!(
                            "{:.1}GHz {len} km {p}: analytic {predicted:.4} vs MC {qv:.4}",
                            clock / 1e9
                        ),
                    );
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 600.0;
    Outcome::new(
        pass,
        format!(
            "18 points in {secs:.1}s; tightest {} (gap/bound {:.2})",
            worst.1, worst.0
        ),
    )
}

fn detector_fidelity() -> Outcome {
    let cases = [
        (DetectorProfile::standard(), HIGH_RATE_CPS, 950.0, 40.0),
        (DetectorProfile::enhanced(), HIGH_RATE_CPS, 450.0, 20.0),
        (DetectorProfile::standard(), LOW_RATE_CPS, 570.0, 25.0),
        (DetectorProfile::enhanced(), LOW_RATE_CPS, 370.0, 17.0),
    ];
    let mut rng = stream(51);
    let mut pass = true;
    let mut parts = Vec::new();
    for (profile, rate, target, tol) in cases {
        let response = profile.response_at(rate);
        let samples: Vec<f64> = (0..1_000_000).map(|_| response.sample_offset(&mut rng)).collect();
        let w = empirical_fwhm(&samples, 5.0).unwrap_or(f64::NAN);
        pass &= (w - target).abs() <= tol;
        parts.push(format!("{} @ {rate:.0e} cps {w:.1} ps", profile.name));
    }
    Outcome::new(pass, parts.join(", "))
}

fn ideal_b92() -> Outcome {
    let mut link = SimConfig::default().link().unwrap();
    link.channel.length_km = 0.0;
    link.channel.excess_loss_db = 0.0;
    link.channel.broadening_ps_per_km = 0.0;
    link.source.base_pulse_fwhm_ps = 1e-6;
    link.detector.efficiency = 1.0;
    link.detector.dark_cps = 0.0;
    link.detector.dead_time_ns = 0.0;
    link.detector.centroid_alpha = 0.0;
    link.detector.jitter_table = b92link::detector::JitterTable::new(vec![(1.0, 1e-6), (2.0, 1e-6)]).unwrap();
    link.sync_fwhm_ps = 0.0;
    link.single_photon_pulses = true;
    let n = 1_000_000;
    let run = run_link(
        &link,
        RunOptions {
            n_slots: n,
            seed: 61,
            record_slots: false,
        },
    )
    .unwrap();
    let frac = run.sifted.len() as f64 / n as f64;
    let pass = run.summary.errors == 0 && run.summary.qber == Some(0.0) && (frac - 0.25).abs() <= 0.002;
    Outcome::new(pass, format!("qber {:?}, sift fraction {frac:.5}", run.summary.qber))
}

fn postprocessing() -> Outcome {
    let (n, qv) = (10_000, 0.066);
    let mut clean = 0;
    for trial in 0..100u64 {
        let mut rng = stream(7000 + trial);
        let alice: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let bob: Vec<u8> = alice.iter().map(|&a| a ^ u8::from(rng.random_bool(qv))).collect();
        let (_, rep) = reconcile(&alice, &bob, qv, &mut rng).unwrap();
        clean += usize::from(rep.residual_errors == 0);
    }
    let mut rng = stream(71);
    let a: Vec<u8> = (0..5000).map(|_| rng.random_range(0..2u8)).collect();
    let b: Vec<u8> = (0..5000).map(|_| rng.random_range(0..2u8)).collect();
    let x: Vec<u8> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
    let ha = privacy_amplify(&a, 9, 2000).unwrap();
    let hb = privacy_amplify(&b, 9, 2000).unwrap();
    let deterministic = ha == privacy_amplify(&a, 9, 2000).unwrap();
    let linear = privacy_amplify(&x, 9, 2000).unwrap() == ha.iter().zip(&hb).map(|(p, q)| p ^ q).collect::<Vec<_>>();
    let h2 = binary_entropy(0.0).unwrap() == 0.0 && binary_entropy(0.5).unwrap() == 1.0;
    Outcome::new(
        clean >= 99 && deterministic && linear && h2,
        format!("cascade clean {clean}/100; toeplitz deterministic={deterministic} linear={linear}; h2 spot values exact={h2}"),
    )
}

fn reproducibility(fitted: &SimConfig) -> Outcome {
    let mut spec = SweepSpec::fig2(fitted.clone());
    spec.fixed.simulation.n_slots = 20_000_000;
    spec.trials_per_point = 2;
    let one = to_csv(&run_sweep(&spec, 1).unwrap());
    let eight = to_csv(&run_sweep(&spec, 8).unwrap());
    let again = to_csv(&run_sweep(&spec, 8).unwrap());
    Outcome::new(
        one == eight && eight == again,
        format!("{} CSV bytes, 1 vs 8 workers identical={}", one.len(), one == eight),
    )
}

fn main() -> ExitCode {
    let report = calibrate(
        &SimConfig::default(),
        &reference_anchors(),
        &CalibrationOptions::default(),
    )
    .expect("calibration runs");
    println!("{}", report.render());
    let fitted = report.fitted;

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("anchor reproduction", anchors(&fitted)));
    let fig2 = sweep(SweepSpec::fig2(fitted.clone()));
    results.push(("fig. 2 trend", fig2_trend(&fig2)));
    let fig3 = sweep(SweepSpec::fig3(fitted.clone()));
    results.push(("fig. 3 trends", fig3_trend(&fig3)));
    results.push(("net rate", net_rates(&fitted)));
    results.push(("operating rate", operating_rate(&fitted)));
    results.push(("oracle equivalence", oracle(&fitted)));
    results.push(("detector fidelity", detector_fidelity()));
    results.push(("ideal B92", ideal_b92()));
    results.push(("post-processing", postprocessing()));
    results.push(("reproducibility", reproducibility(&fitted)));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {:2} {:20} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

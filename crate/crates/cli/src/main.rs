use std::path::{Path, PathBuf};
use std::process::ExitCode;

use b92link::harness::{
    calibrate, emit_results, load_config, reference_anchors, run_sweep, CalibrationOptions, LoadedConfig, SweepSpec,
};
use b92link::postproc::{bits_to_hex, final_key_length, privacy_amplify, reconcile};
use b92link::protocol::{compute_qber, run_link, RunOptions};
use b92link::rng::stream;
use b92link::{ChannelMode, Error, SimConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "b92sim",
    about = "Gigahertz-clocked B92 QKD link simulator",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a single operating point.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        mode: Option<ChannelMode>,
        /// Reconcile, amplify and write the final key as hex.
        #[arg(long)]
        export_key: bool,
    },
    /// Run a parameter sweep and write CSV plus a gnuplot script.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        #[arg(long)]
        trials: Option<u32>,
    },
    /// Fit unpublished parameters to the 2 GHz / 6.55 km anchors.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Print the version.
    Version,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Configuration problems exit 1, failures while running exit 2.
enum Failure {
    Config(Error),
    Runtime(Error),
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e)
}

fn runtime_err(e: impl Into<Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn load(common: &Common) -> Result<SimConfig, Failure> {
    let loaded = match &common.config {
        Some(path) => load_config(path).map_err(config_err)?,
        None => LoadedConfig::from_config(SimConfig::default()).map_err(config_err)?,
    };
    let mut cfg = loaded.config;
    if let Some(seed) = common.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(slots) = common.slots {
        cfg.simulation.n_slots = slots;
    }
    cfg.validate().map_err(config_err)?;
    println!("# resolved configuration");
    println!("{}", cfg.resolved().map_err(config_err)?.to_toml_string());
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(runtime_err)
}

fn run(common: Common, profile: Option<String>, mode: Option<ChannelMode>, export_key: bool) -> Result<(), Failure> {
    let cfg = load(&common)?;
    let profile = profile.unwrap_or_else(|| cfg.detector.profile.clone());
    let link = cfg
        .link_with(&profile, mode.unwrap_or(cfg.channel.mode))
        .map_err(config_err)?;
    let opts = RunOptions {
        n_slots: cfg.simulation.n_slots,
        seed: cfg.simulation.seed,
        record_slots: false,
    };
    let result = run_link(&link, opts).map_err(runtime_err)?;
    println!("{}", result.summary);

    if export_key {
        let est = compute_qber(&result.sifted).map_err(runtime_err)?;
        let mut rng = stream(cfg.simulation.seed ^ 0x5EC2E7);
        let q = est.qber.clamp(1e-3, 0.499);
        let (bob, rep) =
            reconcile(&result.sifted.alice_bits, &result.sifted.bob_bits, q, &mut rng).map_err(runtime_err)?;
        let m = final_key_length(bob.len(), est.qber, rep.parity_bits_leaked, &cfg.security);
        let key = privacy_amplify(&bob, cfg.simulation.seed, m).map_err(runtime_err)?;
        ensure_dir(&common.out)?;
        let path = common.out.join("final_key.hex");
        std::fs::write(&path, bits_to_hex(&key) + "\n").map_err(runtime_err)?;
        println!(
            "reconciliation: {} parity bits leaked, {} corrections, {} residual errors",
            rep.parity_bits_leaked, rep.corrections, rep.residual_errors
        );
        println!("final key: {} bits -> {}", key.len(), path.display());
    }
    Ok(())
}

fn sweep(
    common: Common,
    preset: Option<String>,
    spec_path: Option<PathBuf>,
    workers: usize,
    trials: Option<u32>,
) -> Result<(), Failure> {
    let mut spec = match (preset, spec_path) {
        (Some(name), _) => SweepSpec::preset(&name, load(&common)?).map_err(config_err)?,
        (None, Some(path)) => {
            if common.config.is_some() {
                return Err(Failure::Config(Error::Usage(
                    "--config and --spec are exclusive; put the configuration in the spec file".into(),
                )));
            }
            let text = std::fs::read_to_string(&path).map_err(|e| config_err(e.into()))?;
            SweepSpec::from_toml_str(&text).map_err(config_err)?
        }
        (None, None) => unreachable!("clap requires --preset or --spec"),
    };
    if let Some(seed) = common.seed {
        spec.base_seed = seed;
    }
    if let Some(slots) = common.slots {
        spec.fixed.simulation.n_slots = slots;
    }
    if let Some(t) = trials {
        spec.trials_per_point = t;
    }
    spec.validate().map_err(config_err)?;
    if workers == 0 {
        return Err(Failure::Config(Error::Usage("--workers must be >= 1".into())));
    }
    let table = run_sweep(&spec, workers).map_err(runtime_err)?;
    ensure_dir(&common.out)?;
    let csv = common.out.join(format!("{}.csv", spec.name));
    let script = emit_results(&table, &csv).map_err(runtime_err)?;
    for r in &table.rows {
        println!(
            "{:>12} {:>9} {:>10}  qber {:.4} +/- {:.4}  net {:.1} bps",
            r.axis_value,
            r.profile,
            r.channel_mode.as_str(),
            r.qber,
            r.qber_err,
            r.net_rate_bps
        );
    }
    println!("wrote {} and {}", csv.display(), script.display());
    Ok(())
}

fn calibrate_cmd(common: Common) -> Result<(), Failure> {
    let cfg = load(&common)?;
    let mut opts = CalibrationOptions::default();
    if let Some(seed) = common.seed {
        opts.seed = seed;
    }
    if let Some(slots) = common.slots {
        opts.monte_carlo_slots = Some(slots);
    }
    let report = calibrate(&cfg, &reference_anchors(), &opts).map_err(runtime_err)?;
    print!("{}", report.render());
    ensure_dir(&common.out)?;
    let path = common.out.join("calibrated.toml");
    let mut fitted = report.fitted.clone();
    if !report.success {
        fitted.name = format!("{}-unconverged", opts.name);
    }
    std::fs::write(&path, fitted.to_toml_string()).map_err(runtime_err)?;
    println!("wrote {}", path.display());
    if report.success {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::Calibration(
            "anchor residual above tolerance; best parameters written".into(),
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            common,
            profile,
            mode,
            export_key,
        } => run(common, profile, mode, export_key),
        Command::Sweep {
            common,
            preset,
            spec,
            workers,
            trials,
        } => sweep(common, preset, spec, workers, trials),
        Command::Calibrate { common } => calibrate_cmd(common),
        Command::Version => {
            println!("b92sim {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stomix::{parse_config, run_experiment, ConfigError, Experiment, RunError};
use stomix_core::pool::default_threads;

#[derive(Parser)]
#[command(
    name = "stomix",
    version,
    about = "Spin-torque oscillator network and mixer experiments"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a `trajectory` or `network` experiment.
    Simulate(RunArgs),
    /// Coupled versus uncoupled spectra and phase noise.
    PsdCompare(RunArgs),
    /// RF power sweep with per-point mixer reports.
    MixerSweep(RunArgs),
    /// 1 dB compression point.
    P1db(RunArgs),
    /// Third-order intercept.
    Iip3(RunArgs),
    /// Lock verdicts across free-layer volumes.
    VolumeLock(RunArgs),
    /// Check a config and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn load(path: &PathBuf) -> Result<stomix::ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        RunError::Config(ConfigError::new(
            "",
            format!("cannot read {}: {e}", path.display()),
        ))
    })?;
    Ok(parse_config(&text)?)
}

fn execute(verb: Verb) -> Result<(), RunError> {
    let (args, accepts): (RunArgs, &[Experiment]) = match verb {
        Verb::Validate { config } => {
            let cfg = load(&config)?;
            print!("{}", stomix::emit_config(&cfg));
            return Ok(());
        }
        Verb::Simulate(a) => (a, &[Experiment::Trajectory, Experiment::Network]),
        Verb::PsdCompare(a) => (a, &[Experiment::PsdCompare]),
        Verb::MixerSweep(a) => (a, &[Experiment::MixerSweep]),
        Verb::P1db(a) => (a, &[Experiment::P1db]),
        Verb::Iip3(a) => (a, &[Experiment::Iip3]),
        Verb::VolumeLock(a) => (a, &[Experiment::VolumeLock]),
    };
    let mut cfg = load(&args.config)?;
    if !accepts.contains(&cfg.experiment) {
        return Err(RunError::Config(ConfigError::new(
            "experiment",
            format!("`{}` cannot be run by this command", cfg.experiment),
        )));
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let threads = args.threads.unwrap_or_else(default_threads).max(1);
    let manifest = run_experiment(&cfg, &out, threads)?;
    println!(
        "{}: {} artifacts in {}",
        cfg.experiment,
        manifest.artifacts.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stomix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

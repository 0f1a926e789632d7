use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nmor_sim::config::{parse_config, parse_config_str, preset_config, ExperimentConfig};
use nmor_sim::harness::{self, OutputOptions, RunOutcome, TableFormat};
use nmor_sim::squeezing::FwmChain;
use nmor_sim::Error;

#[derive(Parser)]
#[command(name = "nmor-sim", version, about = "Squeezed-light NMOR magnetometer simulator")]
struct Cli {
    /// Experiment file (sectioned key = value, schema_version = 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory [default: $NMOR_SIM_OUT_DIR or .]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Squeezing metrics of the mixer chain.
    State {
        #[arg(long)]
        gain: Option<f64>,
        #[arg(long)]
        eta_probe: Option<f64>,
        #[arg(long)]
        eta_conjugate: Option<f64>,
    },
    /// Rotation gain that yields the configured shot-noise-limited sensitivity.
    Calibrate,
    /// One scenario: spectrum and sensitivity report.
    Simulate,
    /// Paired squeezed / shot-noise runs over the configured field amplitudes.
    Sweep,
    /// Regenerates the data behind a figure from its preset.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
        figure: u8,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => parse_config_str("schema_version = 1\n", None)?,
    };
    if let Some(s) = cli.seed {
        cfg.scenario.rng_seed = s;
    }
    Ok(cfg)
}

fn print_kv<T: serde::Serialize>(value: &T, format: Format) {
    let json = harness::to_json(value);
    match format {
        Format::Json => print!("{json}"),
        Format::Csv => {
            let v: serde_json::Value = serde_json::from_str(&json).expect("valid json");
            flatten("", &v);
        }
    }
}

fn flatten(prefix: &str, v: &serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x);
            }
        }
        other => println!("{prefix} = {other}"),
    }
}

fn finish(outcome: RunOutcome, seed: u64) -> Result<(), Error> {
    println!("seed = {seed}");
    for p in &outcome.written {
        println!("wrote {}", p.display());
    }
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let opts = OutputOptions {
        out_dir: cli.out_dir.clone().unwrap_or_else(harness::default_out_dir),
        format: match cli.format {
            Format::Csv => TableFormat::Csv,
            Format::Json => TableFormat::Json,
        },
    };
    match &cli.command {
        Command::State {
            gain,
            eta_probe,
            eta_conjugate,
        } => {
            let base = load(cli)?.scenario.chain;
            let chain = FwmChain::new(
                gain.unwrap_or(base.gain),
                eta_probe.unwrap_or(base.eta_probe),
                eta_conjugate.unwrap_or(base.eta_conjugate),
                base.seed_photon_flux,
            )?;
            print_kv(&harness::state_summary(&chain)?, cli.format);
            Ok(())
        }
        Command::Calibrate => {
            print_kv(&harness::calibration_summary(&load(cli)?), cli.format);
            Ok(())
        }
        Command::Simulate => {
            let cfg = load(cli)?;
            finish(harness::simulate(&cfg, &opts)?, cfg.scenario.rng_seed)
        }
        Command::Sweep => {
            let cfg = load(cli)?;
            let (result, outcome) = harness::sweep(&cfg, &opts)?;
            for f in &result.failures {
                eprintln!("sweep point {} T failed: {}", f.applied_field, f.error);
            }
            finish(outcome, cfg.scenario.rng_seed)
        }
        Command::Reproduce { figure } => {
            let mut cfg = match &cli.config {
                Some(p) => parse_config(p)?,
                None => preset_config(&format!("fig{figure}"))?,
            };
            if let Some(s) = cli.seed {
                cfg.scenario.rng_seed = s;
            }
            finish(harness::reproduce(*figure, Some(&cfg), &opts)?, cfg.scenario.rng_seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

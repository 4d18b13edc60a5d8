//! `fedsim` — run, sweep, and cost-query front end for the federated
//! averaging simulator.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 numeric
//! failure at runtime, 1 anything else.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedsim_core::report::{metrics_csv, run_json, write_metrics_csv, write_run_json, CSV_HEADER};
use fedsim_core::{
    analytic_cost, run_with_workers, sweep_with_workers, RoundOrigin, RunConfig, SweepAxis,
    SweepRun,
};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(fedsim_core::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<fedsim_core::Error> for CliError {
    fn from(e: fedsim_core::Error) -> CliError {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                fedsim_core::Error::NonFiniteRound { .. } => 3,
                fedsim_core::Error::InvalidConfig(_)
                | fedsim_core::Error::Csv { .. }
                | fedsim_core::Error::EmptyDataset
                | fedsim_core::Error::Checkpoint(_) => 2,
                _ => 1,
            },
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated averaging simulator with dynamic client sampling and masked uploads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    /// Decay coefficient of dynamic sampling
    Beta,
    /// Masking keep fraction
    Gamma,
    /// Initial sampling rate
    C,
}

impl From<AxisArg> for SweepAxis {
    fn from(axis: AxisArg) -> SweepAxis {
        match axis {
            AxisArg::Beta => SweepAxis::Decay,
            AxisArg::Gamma => SweepAxis::KeepFraction,
            AxisArg::C => SweepAxis::InitialRate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write metrics.csv, run.json, and config.resolved
    Run {
        /// Flat key=value config file
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set masking.gamma=0.5
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Override the global seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for client training; 0 uses all cores. Never
        /// changes results.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Also write the final global model to model.bin
        #[arg(long)]
        save_model: bool,
    },
    /// Run once per value along one axis, holding everything else fixed
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Which knob to vary
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated values, e.g. --values 0.1,0.5,0.9
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Print the analytic mean per-round upload cost
    Cost {
        /// Initial sampling rate C
        #[arg(long)]
        c: f64,
        /// Decay coefficient
        #[arg(long)]
        beta: f64,
        /// Masking keep fraction
        #[arg(long)]
        gamma: f64,
        /// Number of communication rounds
        #[arg(long)]
        rounds: usize,
        /// Decay index origin, 0 or 1
        #[arg(long, default_value_t = 0)]
        t0: u8,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            overrides,
            seed,
            out,
            workers,
            save_model,
        } => cmd_run(&config, &overrides, seed, &out, workers, save_model),
        Command::Sweep {
            config,
            axis,
            values,
            overrides,
            seed,
            out,
            workers,
        } => cmd_sweep(&config, axis, &values, &overrides, seed, &out, workers),
        Command::Cost {
            c,
            beta,
            gamma,
            rounds,
            t0,
        } => cmd_cost(c, beta, gamma, rounds, t0),
    }
}

fn load_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<(RunConfig, std::collections::BTreeMap<String, String>), CliError> {
    let mut map = config::parse_file(path)?;
    config::apply_overrides(&mut map, overrides)?;
    if let Some(seed) = seed {
        map.insert("seed".into(), seed.to_string());
    }
    config::resolve(map)
}

fn cmd_run(
    config_path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    out: &Path,
    workers: usize,
    save_model: bool,
) -> Result<(), CliError> {
    let (config, resolved) = load_config(config_path, overrides, seed)?;
    fs::create_dir_all(out)?;
    let output = run_with_workers(&config, workers)?;

    write_metrics_csv(&out.join("metrics.csv"), &output.records)?;
    write_run_json(&out.join("run.json"), &config, &output.records)?;
    fs::write(
        out.join("config.resolved"),
        config::render_resolved(&resolved),
    )?;
    if save_model {
        output.final_params.save(&out.join("model.bin"))?;
    }

    let last = output.final_record();
    println!(
        "run complete: {} rounds, final test_acc={}, cum_cost={}, outputs in {}",
        config.rounds,
        last.test_acc.map(|a| a.to_string()).unwrap_or_default(),
        last.cum_cost,
        out.display()
    );
    Ok(())
}

fn summary_csv(runs: &[SweepRun]) -> String {
    let mut out = format!("value,{CSV_HEADER}\n");
    for run in runs {
        let r = run.final_record();
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            run.value,
            r.round,
            r.sample_rate,
            r.m,
            r.train_loss,
            opt(r.test_loss),
            opt(r.test_acc),
            r.uploaded,
            r.downloaded,
            r.cum_cost
        ));
    }
    out
}

fn cmd_sweep(
    config_path: &Path,
    axis: AxisArg,
    values: &[f64],
    overrides: &[String],
    seed: Option<u64>,
    out: &Path,
    workers: usize,
) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let (base, resolved) = load_config(config_path, overrides, seed)?;
    fs::create_dir_all(out)?;

    let runs = sweep_with_workers(&base, axis.into(), values, workers)?;
    let axis_name = match axis {
        AxisArg::Beta => "beta",
        AxisArg::Gamma => "gamma",
        AxisArg::C => "c",
    };
    for run in &runs {
        let dir = out.join(format!("{axis_name}={}", run.value));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("metrics.csv"), metrics_csv(&run.records))?;
        fs::write(dir.join("run.json"), run_json(&run.config, &run.records))?;
        fs::write(
            dir.join("config.resolved"),
            config::render_resolved(&config::patch_for_sweep(&resolved, axis, run.value)),
        )?;
    }
    fs::write(out.join("summary.csv"), summary_csv(&runs))?;

    for run in &runs {
        let r = run.final_record();
        println!(
            "{axis_name}={}: final test_acc={}, cum_cost={}",
            run.value,
            r.test_acc.map(|a| a.to_string()).unwrap_or_default(),
            r.cum_cost
        );
    }
    println!("sweep complete: {} runs, outputs in {}", runs.len(), out.display());
    Ok(())
}

fn cmd_cost(c: f64, beta: f64, gamma: f64, rounds: usize, t0: u8) -> Result<(), CliError> {
    let origin = match t0 {
        0 => RoundOrigin::Zero,
        1 => RoundOrigin::One,
        other => {
            return Err(CliError::Config(format!(
                "--t0 must be 0 or 1, got {other}"
            )))
        }
    };
    if !(c > 0.0 && c <= 1.0) {
        return Err(CliError::Config(format!("--c must lie in (0, 1], got {c}")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(CliError::Config(format!(
            "--beta must be non-negative, got {beta}"
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CliError::Config(format!(
            "--gamma must lie in [0, 1], got {gamma}"
        )));
    }
    if rounds == 0 {
        return Err(CliError::Config("--rounds must be positive".into()));
    }
    println!("{:.6}", analytic_cost(c, beta, gamma, rounds, origin));
    Ok(())
}

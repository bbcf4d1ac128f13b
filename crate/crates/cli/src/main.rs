//! `antifragile-sim`: run scenarios, run the improvement loop, render reports.
//!
//! Exit codes: 0 success, 1 invalid scenario or arguments, 2 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use antifragile::harness::output::{read_run, render, write_loop, write_run, ReportFormat};
use antifragile::harness::{run_antifragile_loop, run_scenario, HarnessError, Mode, ScenarioConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "antifragile-sim", version, about = "Deterministic supervised actor scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario once and write its run directory.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the stress, learn, build and apply loop.
    Loop {
        scenario: PathBuf,
        #[arg(long)]
        cycles: Option<u32>,
        /// supervised or baseline
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print the metrics and verdict of a run directory.
    Report {
        run: PathBuf,
        /// table or structured
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
}

#[derive(clap::Args)]
struct OutArgs {
    /// Run directory; defaults to `<root>/<scenario>-<command>-<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default run directories.
    #[arg(long, env = "ANTIFRAGILE_OUT", default_value = "runs", hide = true)]
    out_root: PathBuf,
}

enum Failure {
    Config(String),
    Internal(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut config = ScenarioConfig::load(path).map_err(|e| Failure::Config(format!("invalid scenario at {e}")))?;
    if let Some(seed) = seed {
        config.seed = seed;
        config.system.seed = seed;
    }
    Ok(config)
}

fn run_dir(out: OutArgs, scenario: &Path, command: &str, seed: u64) -> PathBuf {
    out.out.unwrap_or_else(|| {
        let stem = scenario.file_stem().map_or("scenario".into(), |s| s.to_string_lossy());
        out.out_root.join(format!("{stem}-{command}-{seed}"))
    })
}

fn execute(command: Command) -> Result<String, Failure> {
    match command {
        Command::Run { scenario, seed, out } => {
            let config = load(&scenario, seed)?;
            let run = run_scenario(&config)?;
            let dir = run_dir(out, &scenario, "run", config.seed);
            write_run(&dir, &run)?;
            let m = &run.metrics;
            Ok(format!(
                "{}: failures {} availability {:.4} trace {}\n",
                dir.display(),
                m.failures,
                m.availability,
                run.trace.hash()
            ))
        }
        Command::Loop { scenario, cycles, mode, seed, out } => {
            let mut config = load(&scenario, seed)?;
            if let Some(cycles) = cycles {
                config.cycles = cycles;
            }
            if let Some(mode) = mode {
                config.mode = mode;
            }
            let outcome = run_antifragile_loop(&config)?;
            let dir = run_dir(out, &scenario, "loop", config.seed);
            write_loop(&dir, &outcome)?;
            let summary = read_run(&dir)?;
            Ok(format!("{}\n{}", dir.display(), render(&summary, ReportFormat::Table)?))
        }
        Command::Report { run, format } => {
            if !run.join("metrics.csv").is_file() {
                return Err(Failure::Config(format!("{} is not a run directory", run.display())));
            }
            Ok(render(&read_run(&run)?, format)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

//! `defta`: run experiments, extract global models from run directories and
//! summarise runs into tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use defta_core::config::{ConfigError, ScenarioConfig};
use defta_core::extract::{extract_from_dir, ExtractError};
use defta_core::report::{report_tables, ReportError};
use defta_core::runtime::RuntimeError;
use defta_core::scenario::{run_scenario, write_run, ScenarioError};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "defta", version, about = "Decentralized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its run directory.
    Run {
        /// JSON config file.
        config: PathBuf,
        /// Replace the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's output_dir, else runs/<name>-s<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted `key=value` override, JSON-valued; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Average disjoint groups of honest final models and score them.
    Extract {
        dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        groups: usize,
        #[arg(long, default_value_t = 3)]
        per_draw: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean and standard deviation of final metrics, grouped by run name.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot set up worker threads: {0}")]
    Threads(String),
}

impl CliError {
    /// 3 parse, 4 invalid input, 5 runtime failure, 6 I/O.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(e) | CliError::Report(ReportError::Scenario(e)) => scenario_code(e),
            CliError::Report(ReportError::NoRuns | ReportError::MixedTasks { .. }) => 4,
            CliError::Threads(_) => 5,
        }
    }
}

fn scenario_code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Config(c) => match c {
            ConfigError::Io { .. } => 6,
            ConfigError::Parse(_) | ConfigError::Override(_) => 3,
            ConfigError::Invalid(_) => 4,
        },
        ScenarioError::Graph(_) | ScenarioError::Runtime(RuntimeError::ConfigInvalid(_)) => 4,
        ScenarioError::Extract(ExtractError::NotEnoughWorkers { .. } | ExtractError::EmptyRequest) => 4,
        ScenarioError::Model(_) | ScenarioError::Runtime(_) | ScenarioError::Extract(_) => 5,
        ScenarioError::Io { .. } | ScenarioError::Csv(_) | ScenarioError::Artifact(..) => 6,
        ScenarioError::Json(_) => 3,
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DEFTA_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Threads(format!("DEFTA_SIM_THREADS={v:?} is not a number")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Threads(e.to_string()))
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, mut overrides: Vec<String>) -> Result<(), CliError> {
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = ScenarioConfig::load(config, &overrides).map_err(ScenarioError::from)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-s{}", cfg.name, cfg.seed)));
    let (sc, report) = run_scenario(&cfg)?;
    let manifest = write_run(&dir, &cfg, &sc, &report)?;

    println!("run        {} (seed {}, {:?})", manifest.name, manifest.seed, manifest.mode);
    println!("output     {}", dir.display());
    println!("epochs     {}", manifest.epochs_reached);
    if let Some(l) = report.mean_final_honest(|r| r.test_loss) {
        println!("test loss  {l:.6}");
    }
    if let Some(a) = report.mean_final_honest(|r| r.test_acc) {
        println!("test acc   {a:.4}");
    }
    let ev = &report.events;
    println!(
        "messages   {} sent, {} delivered, {} dropped",
        ev.messages_sent, ev.messages_delivered, ev.messages_dropped
    );
    println!(
        "restores   {} from backup, {} from initial model",
        ev.recoveries_from_backup, ev.recoveries_from_initial
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Run {
            config,
            seed,
            out,
            overrides,
        } => run(&config, seed, out, overrides),
        Command::Extract {
            dir,
            groups,
            per_draw,
            seed,
        } => {
            let e = extract_from_dir(&dir, groups, per_draw, seed)?;
            println!("{}", serde_json::to_string_pretty(&e).expect("extraction serialises"));
            Ok(())
        }
        Command::Report { dirs, format } => {
            let t = report_tables(&dirs)?;
            match format {
                Format::Csv => print!("{}", t.to_csv()),
                Format::Markdown => print!("{}", t.to_markdown()),
            }
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

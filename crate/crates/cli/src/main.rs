//! `loran`: run adapter experiments from a JSON configuration.
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
//! 3 finished but at least one run diverged, 4 gradient check failed.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use loran_core::config::ExperimentConfig;
use loran_core::experiment::{self, CommandSummary, RunOptions};
use loran_core::gradcheck::GradcheckScope;
use loran_core::Error;

const EXIT_INTERNAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_GRADCHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "loran", version, about = "Low-rank and nonlinear low-rank adapter experiments")]
struct Cli {
    /// Print the full default configuration as JSON and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Train the configured adapter over all seeds.
    Train(RunArgs),
    /// Plain LoRA against the configured adapter, with a delta column.
    Compare(RunArgs),
    /// The configured adapter under each activation of the ablation list.
    Ablate(RunArgs),
    /// Sweep of the Sinter amplitude and frequency.
    Grid(RunArgs),
    /// Singular spectra of LoRA, LoRAN and an unconstrained update.
    Spectrum(RunArgs),
    /// LoRA and LoRAN paired at each configured rank.
    RankStudy(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's output.dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Maximum number of runs in flight.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Leave wall-clock and start-time fields out of reports.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    All,
    Ops,
    Activations,
    Adapters,
    #[value(alias = "sinter-only")]
    Sinter,
}

impl From<Scope> for GradcheckScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::All => GradcheckScope::All,
            Scope::Ops => GradcheckScope::Ops,
            Scope::Activations => GradcheckScope::Activations,
            Scope::Adapters => GradcheckScope::Adapters,
            Scope::Sinter => GradcheckScope::Sinter,
        }
    }
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scope::All)]
    scope: Scope,
    /// Also write gradcheck.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Swap in a wrong activation derivative; the check must then fail.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidActivation(_) | Error::InvalidRank { .. } => EXIT_CONFIG,
        _ => EXIT_INTERNAL,
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, RunOptions), Error> {
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let opts = RunOptions {
        out,
        seeds: args.seeds.clone().unwrap_or_else(|| cfg.seeds.clone()),
        jobs: args.jobs,
        timestamp: !args.no_timestamp,
    };
    Ok((cfg, opts))
}

/// Writes to stdout, ignoring a reader that has gone away (`loran ... | head`).
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn report(summary: &CommandSummary) {
    for line in &summary.lines {
        emit(line);
    }
    for file in &summary.files {
        eprintln!("wrote {}", file.display());
    }
}

fn run(command: Command) -> Result<u8, Error> {
    let driver = match &command {
        Command::Gradcheck(g) => {
            let (result, summary) =
                experiment::cmd_gradcheck(g.scope.into(), g.inject_fault, g.out.as_deref())?;
            report(&summary);
            return Ok(if result.passed { 0 } else { EXIT_GRADCHECK });
        }
        Command::Train(_) => experiment::cmd_train,
        Command::Compare(_) => experiment::cmd_compare,
        Command::Ablate(_) => experiment::cmd_ablate,
        Command::Grid(_) => experiment::cmd_grid,
        Command::Spectrum(_) => experiment::cmd_spectrum,
        Command::RankStudy(_) => experiment::cmd_rank_study,
    };
    let args = match &command {
        Command::Train(a)
        | Command::Compare(a)
        | Command::Ablate(a)
        | Command::Grid(a)
        | Command::Spectrum(a)
        | Command::RankStudy(a) => a,
        Command::Gradcheck(_) => unreachable!(),
    };
    let (cfg, opts) = load(args)?;
    let summary = driver(&cfg, &opts)?;
    report(&summary);
    if summary.diverged_runs > 0 {
        eprintln!("{} run(s) diverged", summary.diverged_runs);
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        emit(&ExperimentConfig::default().to_json_pretty());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("loran: a subcommand is required (see --help)");
        return ExitCode::from(EXIT_CONFIG);
    };
    match run(command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("loran: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

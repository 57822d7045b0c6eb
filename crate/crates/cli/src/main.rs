use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use requery_core::rephrase::PriorityMode;
use requery_core::{DistributionChoice, Measure, Selection};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "requery", version, about = "Re-query evaluation for referring expression comprehension")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark.
    Gen(GenArgs),
    /// Multimodal re-query: MAE curve and its area.
    Amae(AmaeArgs),
    /// Rephrase re-query: greedy RMAE sweep and its area.
    Armae(ArmaeArgs),
    /// Per-expression and per-object accuracies.
    Accuracy(AccuracyArgs),
    /// Accuracy reachable with unlimited re-queries.
    Converge(ConvergeArgs),
    /// Coverage where smart replacement overtakes combined replacement.
    Crossover(CrossoverArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "REQUERY_OUT_DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Source {
    /// easy, spread, low-detection, or paper-shape.
    #[arg(long)]
    preset: Option<String>,
    /// JSON generator config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    source: Source,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Emit direct predictions instead of candidate distributions.
    #[arg(long)]
    direct: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value = "single", value_parser = parse_distribution)]
    distribution: DistributionChoice,
    #[arg(long, default_value = "entropy", value_parser = parse_measure)]
    measure: Measure,
}

#[derive(Args, Debug, Clone, Copy)]
struct TrialArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Queries {
    /// Every trial uses the benchmark's initial expressions.
    Initial,
    /// Each trial draws the initial expression uniformly from the object's phrasings.
    Resample,
}

#[derive(Args, Debug)]
struct AmaeArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    trials: TrialArgs,
    #[arg(long, value_enum, default_value_t = Queries::Resample)]
    queries: Queries,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Priority {
    Current,
    Initial,
    Oracle,
}

impl From<Priority> for PriorityMode {
    fn from(p: Priority) -> Self {
        match p {
            Priority::Current => PriorityMode::Current,
            Priority::Initial => PriorityMode::Initial,
            Priority::Oracle => PriorityMode::Oracle,
        }
    }
}

#[derive(Args, Debug)]
struct ArmaeArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, value_parser = parse_selection)]
    selection: Selection,
    #[arg(long, value_enum, default_value_t = Priority::Current)]
    priority: Priority,
    #[command(flatten)]
    trials: TrialArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct AccuracyArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value = "single", value_parser = parse_distribution)]
    distribution: DistributionChoice,
    /// Samples for the per-object random mode.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct CrossoverArgs {
    /// Output directory of an `armae --selection combined` run.
    #[arg(long)]
    combined: PathBuf,
    /// Output directory of an `armae --selection smart` run.
    #[arg(long)]
    smart: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

fn parse_distribution(s: &str) -> Result<DistributionChoice, String> {
    s.parse().map_err(|e: requery_core::Error| e.to_string())
}

fn parse_measure(s: &str) -> Result<Measure, String> {
    s.parse().map_err(|e: requery_core::Error| e.to_string())
}

fn parse_selection(s: &str) -> Result<Selection, String> {
    s.parse().map_err(|e: requery_core::Error| e.to_string())
}

/// Runs one invocation. `argv` excludes the program name.
fn run(argv: Vec<String>) -> anyhow::Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("requery".to_string()).chain(argv.iter().cloned()))?;
    let recorded = commands::recorded_args(&argv);
    match cli.command {
        Command::Gen(a) => commands::gen(&a, recorded),
        Command::Amae(a) => commands::amae(&a, recorded),
        Command::Armae(a) => commands::armae(&a, recorded),
        Command::Accuracy(a) => commands::accuracy(&a, recorded),
        Command::Converge(a) => commands::converge(&a, recorded),
        Command::Crossover(a) => commands::crossover(&a, recorded),
        Command::Replay(a) => {
            let argv = commands::replay_argv(&a)?;
            run(argv)
        }
    }
}

fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let (kind, message) = if let Some(e) = err.downcast_ref::<clap::Error>() {
        ("usage", e.to_string().lines().next().unwrap_or_default().to_string())
    } else if let Some(e) = err.downcast_ref::<requery_core::Error>() {
        (e.kind(), format!("{err:#}"))
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        ("io", format!("{err:#}"))
    } else {
        ("input", format!("{err:#}"))
    };
    serde_json::json!({ "error": { "kind": kind, "message": message } })
}

fn main() -> ExitCode {
    match run(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(e) = err.downcast_ref::<clap::Error>() {
                if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
            }
            eprintln!("{}", error_record(&err));
            ExitCode::FAILURE
        }
    }
}

//! `riskscope` command-line entry point.

mod config;
mod error;
mod geo;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "riskscope", version, about = "Childhood obesity risk and state environmental vulnerability pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "riskscope.json")]
    config: PathBuf,
    /// Override a config value by dotted key, e.g. `--set cluster.k=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (replaces `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use this seed for the split, forest, explanation background and k-means.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the child cohort and state indicator table.
    Ingest,
    /// Train and evaluate the four classifiers.
    TrainEval,
    /// Shapley attributions for the configured model.
    Explain,
    /// Normalise indicators and compute EnvScore.
    Envscore,
    /// k-means clustering of states.
    Cluster,
    /// Overlay national risk, EnvScore, clusters and indicators.
    Align,
    /// Annotate state boundaries for choropleth maps.
    Map,
    /// Run every step in order.
    All,
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = PipelineConfig::load(&cli.config, &cli.overrides, cli.out.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest => pipeline::ingest(&cfg),
        Command::TrainEval => pipeline::train_eval(&cfg),
        Command::Explain => pipeline::explain(&cfg),
        Command::Envscore => pipeline::envscore_cmd(&cfg),
        Command::Cluster => pipeline::cluster_cmd(&cfg),
        Command::Align => pipeline::align_cmd(&cfg),
        Command::Map => pipeline::map_cmd(&cfg),
        Command::All => pipeline::all(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RISKSCOPE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

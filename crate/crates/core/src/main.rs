use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use streetview_occupancy::pipeline::infer::StrategySelection;
use streetview_occupancy::pipeline::{self, Context, Overrides, PipelineError};

#[derive(Parser)]
#[command(name = "svocc", version, about = "Street-level panorama survey to parcel occupancy labels")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, default_value = "svocc.json")]
    config: PathBuf,
    /// Master seed for bootstrap and permutation tests (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent backend requests (overrides the config).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Skip stages and frames whose inputs are unchanged.
    #[arg(long, global = true)]
    resume: bool,
    /// Record stage timings in run manifests.
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match GPS samples to parcels and write the frame manifest.
    Link,
    /// Extract frames, estimate headings and render facade-centered views.
    Rectify,
    /// Run the vision model and the decision strategies.
    Infer {
        #[arg(long, default_value = "both", value_parser = |s: &str| s.parse::<StrategySelection>())]
        strategy: StrategySelection,
    },
    /// Change classes, agreement partition and net recovery.
    Change,
    /// Metrics, tests, Moran's I and GeoJSON layers.
    Evaluate,
    /// One-stage metrics across thresholds.
    SweepTau,
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let ov = Overrides { seed: cli.seed, max_concurrent_requests: cli.jobs, resume: cli.resume, record_timings: cli.timings };
    let ctx = Context::load(&cli.config, &ov)?;
    let manifest = match &cli.command {
        Command::Link => pipeline::link::run(&ctx)?,
        Command::Rectify => pipeline::rectify_stage::run(&ctx)?,
        Command::Infer { strategy } => pipeline::infer::run(&ctx, *strategy)?,
        Command::Change => pipeline::change_stage::run(&ctx)?,
        Command::Evaluate => pipeline::evaluate::run(&ctx)?,
        Command::SweepTau => pipeline::sweep::run(&ctx)?,
    };
    for (k, n) in manifest.drop_counts.iter().filter(|(_, n)| **n > 0) {
        eprintln!("dropped {k}: {n}");
    }
    println!("{} {}", manifest.command, manifest.run_id);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors are input errors; clap's own code 2 means a backend failure here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

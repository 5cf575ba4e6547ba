use std::io::IsTerminal;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;
mod config;
mod error;
mod synth;

use commands::analyze::AnalyzeArgs;
use commands::calibrate::CalibrateArgs;
use commands::cost::CostArgs;
use commands::eval::EvalArgs;
use commands::run::RunArgs;
use commands::serve::ServeArgs;
use commands::simulate::SimulateArgs;
use commands::GlobalArgs;

/// Cost-aware stance triage: calibrate deferral thresholds, label with a
/// local scorer plus oracle, evaluate, estimate cost and analyze prevalence.
#[derive(Debug, Parser)]
#[command(name = "triage", version)]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    /// More logging (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pick per-myth deferral policies on a validation split.
    Calibrate(CalibrateArgs),
    /// Label a dataset with the cascade; resumable.
    Run(RunArgs),
    /// Score a labels file against gold.
    Eval(EvalArgs),
    /// Expert, oracle-only and cascade cost estimates.
    Cost(CostArgs),
    /// Stance distributions, bias scores and recommendation transitions.
    Analyze(AnalyzeArgs),
    /// Calibrate, run and evaluate synthetic campaigns.
    Simulate(SimulateArgs),
    /// Serve oracle replay fixtures over HTTP.
    ServeReplay(ServeArgs),
}

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter).with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_tracing(cli.verbose);
    let g = &cli.globals;
    let outcome = match &cli.command {
        Command::Calibrate(a) => commands::calibrate::execute(g, a),
        Command::Run(a) => commands::run::execute(g, a),
        Command::Eval(a) => commands::eval::execute(g, a),
        Command::Cost(a) => commands::cost::execute(g, a),
        Command::Analyze(a) => commands::analyze::execute(g, a),
        Command::Simulate(a) => commands::simulate::execute(g, a),
        Command::ServeReplay(a) => commands::serve::execute(g, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("triage: {f}");
            f.exit_code()
        }
    }
}

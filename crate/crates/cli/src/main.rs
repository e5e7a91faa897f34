//! `r2e`: pipeline stages, queries and the HTTP service from the command
//! line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 a required earlier
//! stage has not been run.

mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::Parser;
use r2e_core::pipeline::{ErrorClass, PipelineError, R2eConfig};

use args::{Cli, Command};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DEPENDENCY: u8 = 4;

fn exit_code(e: &PipelineError) -> u8 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Dependency => EXIT_DEPENDENCY,
    }
}

fn run(cfg: &R2eConfig, command: &Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest(a) => commands::run_ingest(cfg, a),
        Command::TrainRetriever => commands::run_train_retriever(cfg),
        Command::BuildIndex => commands::run_build_index(cfg),
        Command::TrainReasoner => commands::run_train_reasoner(cfg),
        Command::Rank(a) => commands::run_rank(cfg, a),
        Command::Explain(a) => commands::run_explain(cfg, a),
        Command::Evaluate(a) => commands::run_evaluate(cfg, a),
        Command::Serve(_) => commands::run_serve(cfg),
        Command::Synth(a) => commands::run_synth(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if cli.version {
        println!(
            "{}",
            serde_json::json!({"name": "r2e", "version": env!("CARGO_PKG_VERSION")})
        );
        return ExitCode::SUCCESS;
    }
    let cfg = match settings::resolve(&cli, std::env::vars()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        eprintln!("error: no subcommand given; see `r2e --help`");
        return ExitCode::from(EXIT_USAGE);
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is configured once");
    }
    match run(&cfg, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

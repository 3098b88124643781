//! `spider`: run, compare and validate experiment configurations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use spider_core::experiment::{compare, run_experiment, ExperimentConfig, Problem};
use spider_core::Error;

/// Output directory when neither `--out` nor the environment sets one.
const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "spider", version, about = "Variance-reduced proximal experiments")]
struct Cli {
    /// Directory receiving traces and summaries.
    #[arg(long, global = true, env = "SPIDER_OUTPUT_DIR", default_value = DEFAULT_OUT)]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration and write `trace_<algo>_<r>.csv` and `summary.json`.
    Run { config: PathBuf },
    /// Run several configurations on a common problem and write `compare.json`.
    Compare {
        #[arg(required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Config { path: field, message } => Error::Config {
            path: format!("{}: {field}", path.display()),
            message,
        },
        other => other,
    })
}

fn error_json(e: &Error) -> Value {
    let mut v = json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::InvalidConfig(issues) = e {
        v["issues"] = issues
            .iter()
            .map(|i| json!({ "path": i.path, "message": i.message }))
            .collect();
    }
    v
}

fn run(cli: &Cli) -> Result<Value, Error> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config)?;
            let out = run_experiment(&cfg, Some(&cli.out))?;
            let s = &out.summary;
            Ok(json!({
                "out_dir": cli.out,
                "algorithm": s.algorithm,
                "replicates": s.replicates.len(),
                "final_delta": s.envelope.final_delta,
                "last_window_mean_delta": s.envelope.last_window_mean_delta,
            }))
        }
        Command::Compare { configs } => {
            let cfgs = configs.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
            let report = compare(&cfgs, Some(&cli.out))?;
            Ok(json!({
                "out_dir": cli.out,
                "epochs": report.epochs,
                "columns": report.columns,
                "ordering": report.ordering,
            }))
        }
        Command::Validate { config } => {
            let cfg = load(config)?;
            cfg.validate()?;
            let problem = Problem::build(&cfg.problem, cfg.algorithm.burn_in)?;
            let settings = spider_core::experiment::resolve(&cfg.algorithm, problem.n());
            Ok(json!({ "valid": true, "dim": problem.dim(), "settings": settings }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "error": "usage", "message": msg.trim() }));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable output"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            match e {
                Error::InvalidConfig(_) | Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

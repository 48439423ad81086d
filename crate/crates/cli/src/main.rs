//! Benchmark CLI: run one experiment arm, the ablation suite, or the
//! generalization study from a plain-text config file.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numeric
//! failures.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tsbo_core::config::RunConfig;
use tsbo_core::runner;
use tsbo_core::Error;

#[derive(Parser)]
#[command(name = "tsbo", about = "Teacher-student Bayesian optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment and write trace, points and summary files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's method.
        #[arg(long)]
        method: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the four-arm ablation suite over shared seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Sweep the feedback weight over 0.001, 0.01, 0.1 and 1 instead.
        #[arg(long)]
        lambda_sweep: bool,
    },
    /// Run one experiment, then report query-GP generalization with and
    /// without pseudo-label augmentation.
    EvalGen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the version.
    Version,
}

fn load_config(path: &PathBuf) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            method,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = method {
                cfg.method = m.parse()?;
            }
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            let outcome = runner::run_experiment(&cfg)?;
            println!(
                "method={} seed={} best_y={} n_evals={}",
                cfg.method.as_str(),
                cfg.seed,
                outcome.best_y,
                outcome.n_evals
            );
            Ok(())
        }
        Command::Ablate {
            config,
            lambda_sweep,
        } => {
            let cfg = load_config(&config)?;
            let (rows, name) = if lambda_sweep {
                (
                    runner::run_lambda_sweep(&cfg, &[0.001, 0.01, 0.1, 1.0])?,
                    "lambda_sweep.csv",
                )
            } else {
                (runner::run_ablation_suite(&cfg)?, "ablation.csv")
            };
            let table = runner::format_suite_table(&rows);
            print!("{table}");
            runner::write_report(&cfg, name, &table)?;
            Ok(())
        }
        Command::EvalGen { config } => {
            let cfg = load_config(&config)?;
            let outcome = runner::run_experiment(&cfg)?;
            let report = runner::eval_generalization(&cfg, &outcome)?;
            let text = runner::format_gen_report(&report);
            print!("{text}");
            runner::write_report(&cfg, "generalization.csv", &text)?;
            Ok(())
        }
        Command::Version => {
            println!("tsbo {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

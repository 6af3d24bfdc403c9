use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use muprocl_core::config::{self, RunConfig};
use muprocl_core::runner;

#[derive(Parser)]
#[command(name = "muprocl", version, about = "Class-incremental experiments with frozen multi-prototype classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method for every repeat.
    Run(RunArgs),
    /// Also expand the [sweep] grid (K_max values, ablations).
    Sweep(RunArgs),
    /// Print every problem with a config; exit status 0 iff it is runnable.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(args: &RunArgs) -> Result<RunConfig, ExitCode> {
    match config::load(&args.config) {
        Ok(mut cfg) => {
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(o) = &args.out {
                cfg.out_dir = o.clone();
            }
            Ok(cfg)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(2))
        }
    }
}

fn execute(args: &RunArgs, sweep: bool) -> ExitCode {
    let cfg = match load(args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match runner::run(&cfg, sweep, args.jobs) {
        Ok(report) => {
            print!("{}", report.table);
            println!("wrote {} runs to {}", report.entries.len(), cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => execute(args, false),
        Command::Sweep(args) => execute(args, true),
        Command::Validate { config } => match config::validate_file(config) {
            Ok((_, diags)) if diags.is_empty() => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Ok((_, diags)) => {
                for d in &diags {
                    println!("{d}");
                }
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use shelab_cli::{load_config, run, Command, RunError};

#[derive(Parser)]
#[command(name = "shelab", version, about = "Stochastic heat equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overriding `master_seed` (and the sweep seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    Simulate,
    Paired,
    Sweep,
    VerifyKernels,
    VerifyYw,
    Analyze,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Simulate => Command::Simulate,
            Sub::Paired => Command::Paired,
            Sub::Sweep => Command::Sweep,
            Sub::VerifyKernels => Command::VerifyKernels,
            Sub::VerifyYw => Command::VerifyYw,
            Sub::Analyze => Command::Analyze,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let Some(path) = cli.config else {
        eprintln!("invalid configuration: --config PATH is required");
        return ExitCode::from(1);
    };
    let mut cfg = match load_config(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid configuration: {e}");
            return ExitCode::from(1);
        }
    };
    let wanted = Command::from(cli.command);
    if cfg.command != wanted {
        eprintln!("invalid configuration: command: file declares `{}` but `{wanted}` was requested", cfg.command);
        return ExitCode::from(1);
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
        if let Some(s) = cfg.sweep.as_mut() {
            s.master_seed = seed;
        }
    }
    match run(&cfg) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                RunError::Validation(_) => 1,
                RunError::Runtime(_) => 2,
            })
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fbsvi_cli::{execute, exit_code, Command, RunOptions};

#[derive(Parser)]
#[command(name = "fbsvi", version, about = "Multiscale FBSVI experiments")]
struct Cli {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Simulate the oscillating (with run.epsilon) or averaged forward SDE.
    SimulateForward,
    /// Solve the backward inequality on one forward batch.
    SolveBsvi,
    /// Estimate the averaging rates kappa(T_hat).
    AvgVerify,
    /// Forward strong-error sweep over epsilon.
    RateSweep,
    /// Backward error sweep over epsilon.
    ConvergeBackward,
    /// Compare u_eps with u_bar at chosen points.
    Homogenize,
    /// Full benchmark with all checks.
    Example71,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::SimulateForward => Command::SimulateForward,
            Sub::SolveBsvi => Command::SolveBsvi,
            Sub::AvgVerify => Command::AvgVerify,
            Sub::RateSweep => Command::RateSweep,
            Sub::ConvergeBackward => Command::ConvergeBackward,
            Sub::Homogenize => Command::Homogenize,
            Sub::Example71 => Command::Example71,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", fbsvi_cli::CliError::config(e.to_string(), None).to_json());
            return ExitCode::from(2);
        }
    }
    let opts = RunOptions {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    let command = Command::from(cli.command);
    match execute(command, &opts) {
        Ok(report) => {
            println!("{} {}: {} [{}]", report.verdict, command.name(), report.summary, report.out_dir.display());
            ExitCode::from(exit_code(report.verdict) as u8)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}

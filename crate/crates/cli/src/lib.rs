//! Command-line front end: configuration, expression scenarios and the
//! subcommands that write CSV/JSON artifacts.

// `!(v > 0.0)` style checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod expr;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use fbsvi::Verdict;
use serde_json::json;

pub use commands::{Command, Outcome};
pub use error::CliError;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Result of a full invocation.
pub struct Report {
    pub verdict: Verdict,
    pub summary: String,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

/// Loads the config, runs the command and writes `manifest.json`.
pub fn execute(command: Command, opts: &RunOptions) -> Result<Report, CliError> {
    let started = Instant::now();
    let text = match &opts.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut parsed = config::parse_config(&text)?;
    if let Some(seed) = opts.seed {
        parsed.seed = seed;
    }
    let resolved = config::resolve(parsed, &text)?;
    let root = opts
        .out
        .clone()
        .or_else(|| resolved.config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = output::OutDir::create(&root)?;
    let outcome = commands::run(command, &resolved, &mut out)?;
    let config_toml = toml::to_string(&resolved.config).map_err(|e| CliError::io(e.to_string()))?;
    let mut files = out.written.clone();
    files.push("manifest.json".into());
    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": resolved.config,
        "config_toml": config_toml,
        "seed": resolved.config.seed,
        "verdict": outcome.verdict,
        "summary": outcome.summary,
        "files": files,
        "wall_time": started.elapsed().as_secs_f64(),
    });
    out.json("manifest.json", &manifest)?;
    Ok(Report {
        verdict: outcome.verdict,
        summary: outcome.summary,
        out_dir: root,
        files: out.written,
    })
}

/// Process exit code for a verdict: FAIL is 1, anything else 0.
pub fn exit_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Fail => 1,
        _ => 0,
    }
}

pub fn display_path(p: &Path) -> String {
    p.display().to_string()
}

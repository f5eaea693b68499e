//! `mflab`: run named experiments from a config file and write their
//! artifacts.

mod catalog;
mod config;
mod experiments;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::report::{write_json, Kind, Report};

#[derive(Parser)]
#[command(name = "mflab", version, about = "Mean-field grid experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, env = "MFLAB_THREADS")]
        threads: Option<usize>,
    },
    /// List the available experiments.
    List,
}

/// Exit status for hard-assertion failures; configuration and runtime errors
/// use 2.
const HARD_FAILURE: u8 = 1;
const ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            // a closed pipe (`mflab list | head`) is not an error
            let _ = catalog::print_catalog(&mut std::io::stdout().lock());
            ExitCode::SUCCESS
        }
        Command::Run { config, out, threads } => match run(&config, out.as_deref(), threads) {
            Ok(0) => ExitCode::SUCCESS,
            Ok(_) => ExitCode::from(HARD_FAILURE),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(ERROR)
            }
        },
    }
}

/// Returns the number of failed hard assertions.
fn run(config: &Path, out: Option<&Path>, threads: Option<usize>) -> Result<usize> {
    if let Some(k) = threads {
        anyhow::ensure!(k > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    let cfg = config::load(config)?;
    let res = config::resolve(cfg, out)?;
    std::fs::create_dir_all(&res.out).with_context(|| format!("creating {}", res.out.display()))?;
    let mut report = Report::default();
    let outcome = res.build_model().and_then(|built| {
        report.value("model", built.name());
        experiments::run(&res, &built, &mut report)
    });

    let manifest = json!({
        "tool": "mflab",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": res.experiment,
        "config": res.config,
        "seeds": res.seeds(),
        "files": report.files,
    });
    write_json(res.out.join("manifest.json"), &manifest)?;
    let hard = report.hard_failures();
    let soft = report.checks.iter().filter(|c| c.kind == Kind::Soft && !c.passed).count();
    let summary = json!({
        "experiment": res.experiment,
        "passed": hard == 0 && outcome.is_ok(),
        "hard_failures": hard,
        "soft_failures": soft,
        "error": outcome.as_ref().err().map(|e| format!("{e:#}")),
        "checks": report.checks,
        "values": report.values,
    });
    write_json(res.out.join("summary.json"), &summary)?;
    outcome?;
    for c in &report.checks {
        let mark = if c.passed { "ok" } else { "FAILED" };
        println!("{:<6} {:<4} {} ({:.3e}): {}", mark, format!("{:?}", c.kind).to_lowercase(), c.name, c.value, c.detail);
    }
    Ok(hard)
}

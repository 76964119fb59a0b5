use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use conclab::report::{self, Format, Tally};
use conclab::runner::{self, Config};

/// Numerical checks of deviation inequalities for product measures.
#[derive(Debug, Parser)]
#[command(name = "conclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every experiment of a JSON config and write report.json and summary.csv.
    ///
    /// Exit status: 0 all pass, 2 some inconclusive and none fail, 1 any
    /// failure or error.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir` of the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads; CONCLAB_WORKERS takes precedence.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-render a report.json.
    Report {
        file: PathBuf,
        /// csv, json or markdown-summary
        #[arg(long, default_value = "markdown-summary")]
        format: String,
    },
}

fn exit_code(t: Tally) -> u8 {
    if t.fail > 0 {
        1
    } else if t.inconclusive > 0 {
        2
    } else {
        0
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out_dir, workers } => {
            let mut cfg = Config::load(&config)?;
            if workers.is_some() {
                cfg.workers = workers;
            }
            let budget = cfg.worker_budget()?;
            let outcome = runner::run(&cfg, budget)?;
            let written = outcome.write(&cfg.output, out_dir.as_deref()).context("writing reports")?;
            print!("{}", report::to_markdown(&outcome.reports));
            for label in &outcome.halted {
                eprintln!("experiment {label} halted at its first failing check");
            }
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            Ok(ExitCode::from(exit_code(outcome.tally())))
        }
        Command::Report { file, format } => {
            let format: Format = format.parse()?;
            let reports = report::read_json(&file)?;
            print!("{}", report::render(&reports, format)?);
            Ok(ExitCode::from(exit_code(Tally::of(&reports))))
        }
    }
}

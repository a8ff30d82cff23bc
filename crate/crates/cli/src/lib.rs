//! Command-line front end: `scan`, `replay` and `explain`.

pub mod args;
pub mod config;
pub mod explain;
pub mod output;
pub mod replay;
pub mod scan;

use anyhow::Result;

use crate::args::{Cli, Command};
use crate::config::{FileConfig, ReplaySettings, ScanSettings};
use crate::output::emit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Clean = 0,
    Findings = 1,
    Error = 2,
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    Ok(builder.build()?)
}

pub fn run(cli: Cli) -> Result<ExitStatus> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let jobs = cli.jobs.or(file.jobs);
    match cli.command {
        Command::Scan(args) => {
            let settings = ScanSettings::merge(args, file.scan)?;
            let (doc, status) = pool(jobs)?.install(|| scan::cmd_scan(&settings));
            emit(&doc, settings.format, settings.out.as_deref())?;
            Ok(status)
        }
        Command::Replay(args) => {
            let settings = ReplaySettings::merge(args, file.replay)?;
            let (doc, status) = pool(jobs)?.install(|| replay::cmd_replay(&settings));
            emit(&doc, settings.format, settings.out.as_deref())?;
            Ok(status)
        }
        Command::Explain(args) => {
            print!("{}", explain::cmd_explain(&args.report, &args.finding)?);
            Ok(ExitStatus::Clean)
        }
    }
}

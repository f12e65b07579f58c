use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmn_rank::cli::{run, Command};
use dmn_rank::config::RunConfig;

/// Response ranking for information-seeking conversations.
///
/// Settings come from an optional key=value file (`--config`) and are
/// overridden, in order, by `--set key=value` flags and trailing
/// `key=value` arguments.
#[derive(Parser)]
#[command(name = "dmn", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Settings {
    /// Run configuration file (key=value lines, `#` comments).
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Setting override; may repeat.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (defaults to stdout where applicable).
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Print the effective configuration to stderr before running.
    #[arg(long)]
    show_config: bool,
    /// Trailing key=value overrides.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a BM25 index over the external QA collection.
    Index(Settings),
    /// Sample negatives and write a ranking dataset.
    BuildData(Settings),
    /// Train a matching network and write a checkpoint.
    Train(Settings),
    /// Report MAP, MRR and recall for a ranker or a ranking file.
    Eval(Settings),
    /// Write per-candidate scores and ranks for a dataset.
    Rank(Settings),
    /// Show the expansion terms of every candidate response.
    Expand(Settings),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, s) = match cli.command {
        Cmd::Index(s) => (Command::Index, s),
        Cmd::BuildData(s) => (Command::BuildData, s),
        Cmd::Train(s) => (Command::Train, s),
        Cmd::Eval(s) => (Command::Eval, s),
        Cmd::Rank(s) => (Command::Rank, s),
        Cmd::Expand(s) => (Command::Expand, s),
    };
    let mut overrides = s.set;
    overrides.extend(s.overrides);
    if let Some(seed) = s.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(o) = s.output {
        overrides.push(format!("output={}", o.display()));
    }
    let result = RunConfig::load(s.config.as_deref(), &overrides).and_then(|cfg| {
        if s.show_config {
            eprint!("{cfg}");
        }
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        run(command, &cfg, &mut out)?;
        out.flush().map_err(|e| dmn_rank::Error::Data(e.to_string()))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmn {}: {e}", command.as_str());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

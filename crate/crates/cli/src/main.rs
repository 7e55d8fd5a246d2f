//! `tplab`: ingest NGSIM-style trajectories, extract scenes, train and
//! evaluate forecasting models.

mod commands;
mod config;
mod error;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{Args, Parser, Subcommand};
use tplab::model::Variant;

use commands::{Common, INTERRUPTED};
use config::RunConfig;
use error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "tplab", version, about = "Interaction-aware highway trajectory forecasting")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; every field is optional.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for both the train/test split and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Cap on pieces (extract, train, eval) or plots written.
    #[arg(long, global = true, value_name = "N")]
    limit: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<u32>,
    /// Accept checkpoints whose provenance does not match the current data.
    #[arg(long, global = true)]
    allow_mixed: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse raw trajectory files into the track cache.
    Ingest {
        /// Raw files; overrides `paths.raw` from the config.
        raw: Vec<PathBuf>,
    },
    /// Select lane-change egos, extract scene pieces and split them.
    Extract,
    /// Train one or more model variants.
    Train {
        /// CNN_LSTM, V_LSTM, FC_LSTM, INTERACTION_ONLY or `all`; repeatable.
        #[arg(long, value_name = "VARIANT")]
        variant: Vec<String>,
        /// Continue from the latest epoch checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Score checkpoints on the test split.
    Eval {
        /// `.params` or `.ckpt` files, checkpoint directories, variant names,
        /// or `oracle`.
        #[arg(required = true)]
        checkpoints: Vec<String>,
        /// Leave the cited baseline rows out of the comparison table.
        #[arg(long)]
        no_cited: bool,
    },
    /// Draw test scenes as SVG.
    Plot {
        /// Models whose predictions are overlaid.
        checkpoints: Vec<String>,
        /// before-lc, during-lc, after-lc or index:N; repeatable.
        #[arg(long = "select", value_name = "SELECTOR")]
        selectors: Vec<String>,
    },
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>, CliError> {
    let mut out = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            out.extend(Variant::ALL);
        } else {
            out.push(n.parse::<Variant>().map_err(|e| CliError::usage(format!("--variant {n}: {e}")))?);
        }
    }
    out.dedup();
    Ok(out)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let g = &cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.extract.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(e) = g.epochs {
        cfg.train.epochs = e;
    }
    if let Command::Ingest { raw } = &cli.command {
        if !raw.is_empty() {
            cfg.paths.raw = raw.clone();
        }
    }
    if let Command::Train { variant, .. } = &cli.command {
        if !variant.is_empty() {
            cfg.train.variants = parse_variants(variant)?;
        }
    }
    cfg.validate()?;
    let common = Common { force: g.force, limit: g.limit, allow_mixed: g.allow_mixed };
    match &cli.command {
        Command::Ingest { .. } => commands::ingest(&cfg, &common),
        Command::Extract => commands::extract(&cfg, &common),
        Command::Train { resume, .. } => commands::train(&cfg, &common, *resume),
        Command::Eval { checkpoints, no_cited } => commands::eval(&cfg, &common, checkpoints, !no_cited),
        Command::Plot { checkpoints, selectors } => commands::plot(&cfg, &common, checkpoints, selectors),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let handler = ctrlc::set_handler(|| {
        if INTERRUPTED.swap(true, Ordering::SeqCst) {
            std::process::exit(exit::INTERRUPTED.into());
        }
        eprintln!("interrupt: stopping after the current epoch (press again to abort)");
    });
    if let Err(e) = handler {
        eprintln!("warning: cannot install Ctrl-C handler: {e}");
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

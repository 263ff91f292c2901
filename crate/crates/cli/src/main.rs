//! `ilob`: replay, measure and simulate informal currency order flow.
//!
//! Settings resolve as flags over a `--config` file over built-in defaults.
//! The config file holds one `key = value` per line; `#` starts a comment
//! and every long flag below is also a valid key. Each run writes its
//! tables and a `manifest.json` with the resolved settings, seed, versions
//! and input digests into `--out`.

mod commands;
mod input;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::Run;
use crate::output::{Output, MANIFEST};
use crate::settings::{Overrides, Settings};

#[derive(Parser, Debug)]
#[command(name = "ilob", version, about = "Limit order book tools for informal currency markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Order flow (csv or jsonl); repeat for several files.
    #[arg(long, global = true, value_name = "PATH")]
    input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Settings file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Validate and normalise order flow.
    Ingest,
    /// Replay the flow through the book: executions, events, closing depth.
    Replay,
    /// Daily candles, spreads, distances, histograms, profiles, size tails and price impact.
    Stats,
    /// Intensity, impact slope and volatility estimates.
    Calibrate,
    /// Market maker simulation over the observed flow.
    MmSim,
    /// Market maker simulation over bootstrap replicates of the flow.
    Bootstrap,
    /// Counterfactual mid-price series under market maker intervention.
    Adjust,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Replay => "replay",
            Command::Stats => "stats",
            Command::Calibrate => "calibrate",
            Command::MmSim => "mm-sim",
            Command::Bootstrap => "bootstrap",
            Command::Adjust => "adjust",
        }
    }

    fn randomized(self) -> bool {
        matches!(self, Command::MmSim | Command::Bootstrap | Command::Adjust)
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let mut settings = Settings::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    if cli.command.randomized() && settings.seed()?.is_none() {
        let seed: u64 = rand::random();
        log::info!("no seed given, using {seed}");
        settings.set("seed", seed.to_string());
    }
    let out_dir = cli.out.as_deref().context("no output directory given (use --out)")?;
    let input = input::load(&cli.input, settings.str("format"))?;
    let run = Run {
        settings: &settings,
        input: &input,
    };

    let mut out = Output::create(out_dir)?;
    let result = match cli.command {
        Command::Ingest => commands::ingest(&run, &mut out),
        Command::Replay => commands::replay_cmd(&run, &mut out),
        Command::Stats => commands::stats(&run, &mut out),
        Command::Calibrate => commands::calibrate(&run, &mut out),
        Command::MmSim => commands::mm_sim(&run, &mut out),
        Command::Bootstrap => commands::bootstrap(&run, &mut out),
        Command::Adjust => commands::adjust(&run, &mut out),
    };
    if let Err(e) = result {
        out.discard();
        return Err(e);
    }
    let manifest = json!({
        "command": cli.command.name(),
        "versions": {
            "ilob": env!("CARGO_PKG_VERSION"),
            "informal-lob": informal_lob::VERSION,
        },
        "seed": settings.seed()?,
        "config": settings.values(),
        "inputs": input.digests,
        "outputs": out.written(),
    });
    out.json(MANIFEST, &manifest)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = json!({
                "error": {
                    "command": cli.command.name(),
                    "message": format!("{e:#}"),
                }
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use folio_cli::commands::{cmd_all, cmd_backtest, cmd_cardinality, cmd_frontier, cmd_report, cmd_universe, Market};
use folio_cli::config::{ChatMode, RunConfig};

#[derive(Parser)]
#[command(name = "folio", version, about = "LLM-voted universes, mean-variance frontiers and backtests")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Vote the trading universes and collect model weights.
    Universe,
    /// Efficient frontiers and the fixed-weight strategies.
    Frontier,
    /// Cardinality-constrained frontiers and portfolios.
    Cardinality,
    /// Evaluation tables and wealth curves.
    Backtest,
    /// Plot-ready data files.
    Report,
    /// Every stage in order.
    All,
}

#[derive(Args)]
struct Overrides {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "folio.toml")]
    config: PathBuf,
    /// Universe sizes, e.g. `15,30,45`.
    #[arg(long, global = true, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Cardinality targets, e.g. `15,30`.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Evaluation periods to run, by label.
    #[arg(long, global = true, value_delimiter = ',')]
    periods: Option<Vec<String>>,
    /// Frontier points, for both frontier kinds.
    #[arg(long, global = true)]
    points: Option<usize>,
    /// Replay recorded chat transcripts.
    #[arg(long, global = true, conflicts_with = "live")]
    replay: bool,
    /// Call the chat endpoint; needs `LLM_API_KEY`.
    #[arg(long, global = true)]
    live: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = &self.sizes {
            cfg.universe.sizes = s.clone();
        }
        if let Some(k) = &self.k {
            cfg.cardinality.k = k.clone();
        }
        if let Some(p) = &self.periods {
            cfg.restrict_periods(p)?;
        }
        if let Some(n) = self.points {
            cfg.optimizer.points = n;
            cfg.cardinality.points = n;
        }
        if self.replay {
            cfg.universe.mode = ChatMode::Replay;
        }
        if self.live {
            cfg.universe.mode = ChatMode::Live;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        cfg.check_paths()
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::parse_file(&cli.opts.config)?;
    cli.opts.apply(&mut cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cli.command {
        Command::Universe => {
            for u in cmd_universe(&cfg)? {
                println!("{}-stock universe: {}", u.size, u.tickers.join(" "));
            }
        }
        Command::Frontier => {
            let market = Market::load(&cfg)?;
            for f in cmd_frontier(&cfg, &market)? {
                println!("{}-stock frontier written (bounds {} to {})", f.size, f.bounds.lower, f.bounds.upper);
            }
        }
        Command::Cardinality => {
            let market = Market::load(&cfg)?;
            for c in cmd_cardinality(&cfg, &market)? {
                println!(
                    "k = {} over {} assets: largest frontier gap {:.3e}",
                    c.k, c.universe_size, c.max_frontier_gap
                );
            }
        }
        Command::Backtest => {
            let market = Market::load(&cfg)?;
            for t in cmd_backtest(&cfg, &market)? {
                println!("{} ({} rows)", t.path.display(), t.rows.len());
            }
        }
        Command::Report => {
            for p in cmd_report(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::All => {
            let all = cmd_all(&cfg)?;
            for t in &all.tables {
                println!("{} ({} rows)", t.path.display(), t.rows.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

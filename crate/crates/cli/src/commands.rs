//! Pipeline stages. Each stage reads its inputs from the configured data
//! files or from earlier stages' output directories, so stages can be rerun
//! independently.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use folio_core::backtest::{
    compute_metrics, portfolio_returns, sector_allocation, wealth_curve, BenchmarkSet, MetricsReport, WealthCurve,
};
use folio_core::cardinality::{cc_frontier_with, solve_cc_qp_with, BnbSettings, CardinalitySpec, SolveStatus};
use folio_core::formats::{
    read_curves, read_frontier, read_meta, read_portfolio, read_sector_map, render_metrics_table, write_cardinality_solution,
    write_curves, write_frontier, write_metrics_table, write_moments, write_portfolio, write_sector_allocation,
    write_tally, write_ticker_list, write_weights,
};
use folio_core::market_data::{
    compute_returns, estimate_moments, load_prices, resample_weekly, slice_period, Moments, PeriodSpec, ReturnPanel,
};
use folio_core::optimizer::{
    bounds_for_universe, compute_frontier, equal_weight, max_return, max_sharpe, min_variance, BoundSpec, Portfolio,
};
use folio_core::universe::{
    collect_universe_votes, load_constituents, request_weights, select_top_k, tally_responses, ChatClient,
    ChatTranscript, LiveClient, RecordingClient, ReplayClient,
};

use crate::config::{ChatMode, RunConfig};
use crate::strategy::StrategyLabel;

/// Weekly return panel over every priced series.
pub struct Market {
    pub returns: ReturnPanel,
}

impl Market {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let loaded = load_prices(&cfg.data.prices).with_context(|| format!("loading {}", cfg.data.prices.display()))?;
        for d in &loaded.dropped {
            log::warn!("dropping `{}` from the price table: {:?}", d.ticker, d.reason);
        }
        let prices = if cfg.data.resample_weekly {
            resample_weekly(&loaded.panel)?
        } else {
            loaded.panel
        };
        Ok(Self {
            returns: compute_returns(&prices)?,
        })
    }

    /// Moments of `tickers` over the estimation window.
    pub fn in_sample_moments(&self, cfg: &RunConfig, tickers: &[String]) -> Result<Moments> {
        let window = slice_period(&self.returns, &cfg.in_sample.spec()?)?;
        let panel = window.select(tickers)?;
        Ok(estimate_moments(&panel)?)
    }

    /// Returns over an evaluation period, which must lie inside the data.
    pub fn period(&self, spec: &PeriodSpec) -> Result<ReturnPanel> {
        let dates = self.returns.dates();
        let (first, last) = (self.returns.anchor(), *dates.last().context("empty return panel")?);
        // Weekly stamps fall up to six days before a period's calendar end.
        if spec.start < first || spec.end > last + chrono::Days::new(6) {
            bail!(
                "period `{}` ({} to {}) is outside the data range {} to {}",
                spec.label,
                spec.start,
                spec.end,
                first,
                last
            );
        }
        Ok(slice_period(&self.returns, spec)?)
    }
}

fn transcript_path(dir: &Path, stage: &str, size: usize) -> PathBuf {
    dir.join(format!("{stage}_{size}.txt"))
}

enum Client {
    Replay(ReplayClient),
    Live(RecordingClient<LiveClient>),
}

impl Client {
    fn open(cfg: &RunConfig, mode: ChatMode, stage: &str, size: usize) -> Result<Self> {
        Ok(match mode {
            ChatMode::Replay => {
                let path = transcript_path(&cfg.universe.transcripts, stage, size);
                let t = ChatTranscript::load(&path).with_context(|| format!("loading {}", path.display()))?;
                Client::Replay(ReplayClient::new(t))
            }
            ChatMode::Live => Client::Live(RecordingClient::new(LiveClient::from_env(cfg.universe.live.clone())?)),
        })
    }

    fn as_dyn(&mut self) -> &mut dyn ChatClient {
        match self {
            Client::Replay(c) => c,
            Client::Live(c) => c,
        }
    }

    /// Saves a live session so it can be replayed later.
    fn finish(self, cfg: &RunConfig, stage: &str, size: usize) -> Result<()> {
        if let Client::Live(c) = self {
            let dir = cfg.universe_dir().join("transcripts");
            std::fs::create_dir_all(&dir)?;
            c.into_transcript().save(&transcript_path(&dir, stage, size))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniverseOutcome {
    pub size: usize,
    pub tickers: Vec<String>,
    pub raw_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Votes the universes and collects model-assigned weights.
pub fn cmd_universe(cfg: &RunConfig) -> Result<Vec<UniverseOutcome>> {
    let constituents = load_constituents(&cfg.data.constituents)
        .with_context(|| format!("loading {}", cfg.data.constituents.display()))?;
    if constituents.is_empty() {
        bail!("constituents file {} lists no tickers", cfg.data.constituents.display());
    }
    let dir = cfg.universe_dir();
    let mut outcomes = Vec::new();
    for &size in &cfg.universe.sizes {
        let mut client = Client::open(cfg, cfg.universe.mode, "universe", size)?;
        let transcript = collect_universe_votes(client.as_dyn(), size, cfg.universe.calls)
            .with_context(|| format!("collecting votes for {size} stocks"))?;
        client.finish(cfg, "universe", size)?;
        let tally = tally_responses(&transcript, &constituents, &cfg.universe.remap);
        if !tally.rejected.is_empty() {
            log::info!(
                "{size}-stock votes: ignored non-constituent tokens {:?}",
                tally.rejected.keys().collect::<Vec<_>>()
            );
        }
        let tickers = select_top_k(&tally, size)?;
        write_tally(&dir.join(format!("tally_{size}.csv")), &tally)?;
        write_ticker_list(&dir.join(format!("universe_{size}.txt")), &tickers)?;

        let mut client = Client::open(cfg, cfg.universe.mode, "weights", size)?;
        let (raw, _) = request_weights(client.as_dyn(), &tickers, &cfg.universe.remap)
            .with_context(|| format!("requesting weights for {size} stocks"))?;
        client.finish(cfg, "weights", size)?;
        if raw.needs_normalization() {
            log::info!("{size}-stock weights sum to {:.4}; normalising", raw.sum());
        }
        let normalized = raw.normalized()?;
        write_weights(&dir.join(format!("weights_{size}.csv")), &raw, &normalized.weights)?;
        outcomes.push(UniverseOutcome {
            size,
            tickers,
            raw_weights: raw.weights,
            weights: normalized.weights,
        });
    }
    Ok(outcomes)
}

fn read_universe(cfg: &RunConfig, size: usize) -> Result<Vec<String>> {
    let path = cfg.universe_dir().join(format!("universe_{size}.txt"));
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("missing universe for {size} stocks ({}); run `universe` first", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

fn read_gpt_weights(cfg: &RunConfig, size: usize) -> Result<Portfolio> {
    let path = cfg.universe_dir().join(format!("weights_{size}.csv"));
    let p = read_portfolio(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(p.with_label(StrategyLabel::GptWeighted.name()))
}

fn bounds_for(cfg: &RunConfig, size: usize) -> Result<BoundSpec> {
    match cfg.bounds_override(size) {
        Some([l, u]) => Ok(BoundSpec::new(l, u)?),
        None => Ok(bounds_for_universe(size)?),
    }
}

#[derive(Debug, Clone)]
pub struct FrontierOutcome {
    pub size: usize,
    pub bounds: BoundSpec,
    pub portfolios: Vec<Portfolio>,
}

/// Efficient frontier and the five fixed-weight strategies per universe.
pub fn cmd_frontier(cfg: &RunConfig, market: &Market) -> Result<Vec<FrontierOutcome>> {
    let mut out = Vec::new();
    for &size in &cfg.universe.sizes {
        let tickers = read_universe(cfg, size)?;
        let moments = market
            .in_sample_moments(cfg, &tickers)
            .with_context(|| format!("estimating moments for the {size}-stock universe"))?;
        let bounds = bounds_for(cfg, size)?;
        let frontier = compute_frontier(&moments, &bounds, cfg.optimizer.points)
            .with_context(|| format!("{size}-stock frontier"))?;
        let dir = cfg.frontier_dir(size);
        write_moments(&dir.join("moments.csv"), &moments)?;
        write_frontier(&dir.join("frontier.csv"), &frontier)?;

        let (_, sharpe) = max_sharpe(&frontier)?;
        let portfolios = vec![
            read_gpt_weights(cfg, size)?,
            equal_weight(&tickers)?.with_label(StrategyLabel::EquallyWeighted.name()),
            min_variance(&moments, &bounds)?.portfolio.with_label(StrategyLabel::MinVar.name()),
            max_return(&moments, &bounds)?.with_label(StrategyLabel::MaxRet.name()),
            sharpe.with_label(StrategyLabel::MaxSharpe.name()),
        ];
        for (label, p) in StrategyLabel::PORTFOLIOS.iter().zip(&portfolios) {
            write_portfolio(&dir.join(format!("{}.csv", label.slug())), p)?;
        }
        out.push(FrontierOutcome {
            size,
            bounds,
            portfolios,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CardinalityOutcome {
    pub k: usize,
    pub universe_size: usize,
    /// (label, optimality gap, status) for the three selected portfolios.
    pub selected: Vec<(StrategyLabel, f64, SolveStatus)>,
    pub max_frontier_gap: f64,
}

fn cardinality_universe(cfg: &RunConfig, market: &Market) -> Result<Vec<String>> {
    if let Some(list) = &cfg.cardinality.universe {
        return Ok(list.clone());
    }
    let constituents = load_constituents(&cfg.data.constituents)?;
    Ok(market
        .returns
        .tickers()
        .iter()
        .filter(|t| constituents.contains(*t))
        .cloned()
        .collect())
}

/// Cardinality-constrained frontiers and portfolios per `k`.
pub fn cmd_cardinality(cfg: &RunConfig, market: &Market) -> Result<Vec<CardinalityOutcome>> {
    let tickers = cardinality_universe(cfg, market)?;
    let moments = market
        .in_sample_moments(cfg, &tickers)
        .context("estimating moments for the cardinality universe")?;
    let settings = BnbSettings {
        node_limit: cfg.cardinality.node_limit,
        time_limit: cfg.cardinality.time_limit_secs.map(Duration::from_secs),
        ..BnbSettings::default()
    };
    let mut out = Vec::new();
    for &k in &cfg.cardinality.k {
        let spec = CardinalitySpec::new(k, bounds_for(cfg, k)?)?;
        let dir = cfg.cardinality_dir(k);
        std::fs::create_dir_all(&dir)?;
        if cfg.cardinality.node_log {
            let mut log = BufWriter::new(File::create(dir.join("nodes_min_var.jsonl"))?);
            let mut failed = None;
            solve_cc_qp_with(&moments, &spec, None, &settings, &mut |rec| {
                if failed.is_none() {
                    if let Err(e) = serde_json::to_writer(&mut log, rec).map_err(anyhow::Error::from).and_then(|_| {
                        log.write_all(b"\n")?;
                        Ok(())
                    }) {
                        failed = Some(e);
                    }
                }
            })?;
            if let Some(e) = failed {
                return Err(e.context("writing node log"));
            }
            log.flush()?;
        }
        let ccf = cc_frontier_with(&moments, &spec, cfg.cardinality.points, &settings)
            .with_context(|| format!("cardinality frontier for k = {k}"))?;
        write_frontier(&dir.join("frontier.csv"), &ccf.frontier)?;
        let (idx, _) = max_sharpe(&ccf.frontier)?;
        let picks = [
            (StrategyLabel::MaxSharpeCard, &ccf.solutions[idx]),
            (StrategyLabel::MinVarCard, &ccf.min_variance),
            (StrategyLabel::MaxRetCard, &ccf.max_return),
        ];
        let mut selected = Vec::new();
        for (label, sol) in picks {
            if sol.status != SolveStatus::Optimal {
                log::warn!(
                    "{label} (k = {k}) stopped at {:?} with optimality gap {:.3e}",
                    sol.status,
                    sol.optimality_gap
                );
            }
            write_cardinality_solution(&dir.join(format!("{}.csv", label.slug())), label.name(), sol)?;
            selected.push((label, sol.optimality_gap, sol.status));
        }
        let max_frontier_gap = ccf
            .solutions
            .iter()
            .map(|s| s.optimality_gap)
            .fold(0.0, f64::max);
        out.push(CardinalityOutcome {
            k,
            universe_size: tickers.len(),
            selected,
            max_frontier_gap,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BacktestTable {
    pub size: usize,
    pub period: String,
    pub rows: Vec<(String, MetricsReport)>,
    pub path: PathBuf,
}

fn strategy_portfolios(cfg: &RunConfig, size: usize) -> Result<Vec<(StrategyLabel, Portfolio)>> {
    let dir = cfg.frontier_dir(size);
    let mut out = Vec::new();
    for label in StrategyLabel::PORTFOLIOS {
        let path = dir.join(format!("{}.csv", label.slug()));
        let p = read_portfolio(&path).with_context(|| format!("missing {}; run `frontier` first", path.display()))?;
        out.push((label, p));
    }
    let card = cfg.cardinality_dir(size);
    for label in StrategyLabel::CARDINALITY {
        let path = card.join(format!("{}.csv", label.slug()));
        if path.exists() {
            out.push((label, read_portfolio(&path)?));
        } else {
            log::warn!("no k = {size} cardinality portfolio `{label}`; row omitted");
        }
    }
    Ok(out)
}

/// Evaluation tables and wealth curves per universe size and period.
pub fn cmd_backtest(cfg: &RunConfig, market: &Market) -> Result<Vec<BacktestTable>> {
    let indices: Vec<(String, String)> = cfg
        .benchmarks
        .indices
        .iter()
        .map(|[l, t]| (l.clone(), t.clone()))
        .collect();
    let mut tables = Vec::new();
    for period in &cfg.periods {
        let spec = period.spec()?;
        let panel = market.period(&spec)?;
        let bench = BenchmarkSet::from_panel(&panel, &indices, &cfg.benchmarks.funds)?;
        let index_label = |name: &str| match name {
            "S&P 500" => Some(StrategyLabel::Sp500),
            "Dow Jones" => Some(StrategyLabel::DowJones),
            "NASDAQ" => Some(StrategyLabel::Nasdaq),
            _ => None,
        };
        for &size in &cfg.universe.sizes {
            let mut curves: Vec<(String, String, WealthCurve)> = Vec::new();
            for (label, p) in strategy_portfolios(cfg, size)? {
                let series = portfolio_returns(&p, &panel).with_context(|| format!("{label} over {}", spec.label))?;
                curves.push((label.name().into(), label.slug().into(), wealth_curve(&series)?));
            }
            for (name, curve) in &bench.index_curves {
                let slug = index_label(name).map_or_else(|| slugify(name), |l| l.slug().to_owned());
                curves.push((name.clone(), slug, curve.clone()));
            }
            match &bench.fund_average {
                Some(avg) => {
                    let l = StrategyLabel::PopularFunds;
                    curves.push((l.name().into(), l.slug().into(), avg.clone()));
                }
                None => log::warn!("no fund series available; `Popular Investment Funds` row omitted"),
            }

            let dir = cfg.backtest_dir(size, &spec.label);
            let mut rows = Vec::new();
            for (name, slug, curve) in &curves {
                let metrics = compute_metrics(&curve.returns()).with_context(|| format!("metrics for {name}"))?;
                write_curves(&dir.join("curves").join(format!("{slug}.csv")), &[(name.clone(), curve.clone())])?;
                rows.push((name.clone(), metrics));
            }
            let path = dir.join("metrics.csv");
            write_metrics_table(&path, &rows)?;
            std::fs::write(dir.join("metrics.txt"), render_metrics_table(&rows))?;
            tables.push(BacktestTable {
                size,
                period: spec.label.clone(),
                rows,
                path,
            });
        }
    }
    Ok(tables)
}

fn slugify(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Plot-ready data assembled from earlier stages.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.report_dir();
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();

    for &size in &cfg.universe.sizes {
        let path = dir.join(format!("frontier_scatter_{size}.csv"));
        write_scatter(cfg, size, &path)?;
        written.push(path);
    }

    for period in &cfg.periods {
        let mut top: Vec<(String, WealthCurve)> = Vec::new();
        for &size in &cfg.universe.sizes {
            let curves_dir = cfg.backtest_dir(size, &period.label).join("curves");
            if !curves_dir.is_dir() {
                bail!("missing backtest curves in {}; run `backtest` first", curves_dir.display());
            }
            let mut all = Vec::new();
            for label in StrategyLabel::ALL {
                let p = curves_dir.join(format!("{}.csv", label.slug()));
                if p.exists() {
                    let (name, curve) = read_curves(&p)?.remove(0);
                    if matches!(label, StrategyLabel::GptWeighted | StrategyLabel::MaxRet | StrategyLabel::MaxSharpe) {
                        top.push((format!("{name} ({size})"), curve.clone()));
                    }
                    all.push((name, curve));
                }
            }
            let path = dir.join(format!("cumulative_{size}_{}.csv", period.label));
            write_curves(&path, &all)?;
            written.push(path);
        }
        let path = dir.join(format!("top_strategies_{}.csv", period.label));
        write_curves(&path, &top)?;
        written.push(path);
    }

    if let Some(sectors) = &cfg.data.sectors {
        let map = read_sector_map(sectors)?;
        let mut rows = Vec::new();
        for &size in &cfg.universe.sizes {
            let p = read_gpt_weights(cfg, size)?;
            rows.push((format!("{} ({size})", StrategyLabel::GptWeighted), sector_allocation(&p, &map)?));
        }
        let path = dir.join("sectors.csv");
        write_sector_allocation(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Risk/return scatter: frontier points, single assets and starred picks,
/// plus the matching cardinality frontier when it exists.
fn write_scatter(cfg: &RunConfig, size: usize, path: &Path) -> Result<()> {
    let fdir = cfg.frontier_dir(size);
    let moments = folio_core::formats::read_moments(&fdir.join("moments.csv"))
        .with_context(|| format!("missing frontier outputs for {size}; run `frontier` first"))?;
    let (_, rows) = read_frontier(&fdir.join("frontier.csv"))?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "kind,label,volatility,expected_return")?;
    for r in &rows {
        writeln!(out, "frontier,,{},{}", r.variance.sqrt(), r.achieved_return)?;
    }
    for (i, t) in moments.tickers().iter().enumerate() {
        writeln!(out, "asset,{t},{},{}", moments.cov()[(i, i)].sqrt(), moments.mu()[i])?;
    }
    for label in StrategyLabel::PORTFOLIOS {
        let p = read_portfolio(&fdir.join(format!("{}.csv", label.slug())))?;
        writeln!(
            out,
            "star,{},{},{}",
            label,
            moments.variance(&p.weights).sqrt(),
            moments.expected_return(&p.weights)
        )?;
    }
    let cdir = cfg.cardinality_dir(size);
    if cdir.join("frontier.csv").exists() {
        let (_, rows) = read_frontier(&cdir.join("frontier.csv"))?;
        for r in &rows {
            writeln!(out, "card_frontier,,{},{}", r.variance.sqrt(), r.achieved_return)?;
        }
        for label in StrategyLabel::CARDINALITY {
            let meta = read_meta(&cdir.join(format!("{}.csv", label.slug())))?;
            let num = |k: &str| -> Result<f64> {
                meta.get(k)
                    .with_context(|| format!("{label}: missing `{k}`"))?
                    .parse()
                    .with_context(|| format!("{label}: bad `{k}`"))
            };
            writeln!(out, "card_star,{label},{},{}", num("variance")?.sqrt(), num("expected_return")?)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct AllOutcome {
    pub universes: Vec<UniverseOutcome>,
    pub frontiers: Vec<FrontierOutcome>,
    pub cardinality: Vec<CardinalityOutcome>,
    pub tables: Vec<BacktestTable>,
    pub report: Vec<PathBuf>,
}

pub fn cmd_all(cfg: &RunConfig) -> Result<AllOutcome> {
    let universes = cmd_universe(cfg)?;
    let market = Market::load(cfg)?;
    let frontiers = cmd_frontier(cfg, &market)?;
    let cardinality = cmd_cardinality(cfg, &market)?;
    let tables = cmd_backtest(cfg, &market)?;
    let report = cmd_report(cfg)?;
    Ok(AllOutcome {
        universes,
        frontiers,
        cardinality,
        tables,
        report,
    })
}

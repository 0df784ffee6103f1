//! Delimited text formats shared by the command-line tools and fixtures.
//!
//! All files are comma-separated with a header row. Lines starting with `#`
//! carry metadata (`# key=value`) and are skipped by readers that do not need
//! it. Floats are written in shortest round-trip form, so reading a file back
//! reproduces the values exactly.
//!
//! | file            | header                                                        |
//! |-----------------|---------------------------------------------------------------|
//! | portfolio       | `ticker,weight`                                               |
//! | cardinality     | `ticker,weight,z` plus `# optimality_gap=…` metadata           |
//! | frontier        | `epsilon,achieved_return,variance,gap,<ticker>…`              |
//! | moments         | `ticker,mu,<ticker>…` (one covariance row per asset)           |
//! | metrics table   | `Portfolio,Cumulative Returns (%),…,VaR 99% of Return (%)`      |
//! | wealth curve    | `date,<label>…`                                               |
//! | sector map      | `ticker,sector`                                               |
//! | tally           | `ticker,count` plus `# num_calls=…`                            |
//! | weights         | `ticker,raw_weight,weight`                                    |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::backtest::{MetricsReport, WealthCurve};
use crate::cardinality::CardinalitySolution;
use crate::error::FormatError;
use crate::market_data::Moments;
use crate::optimizer::{Frontier, Portfolio};
use crate::universe::{RawWeights, UniverseTally};

pub const METRICS_HEADER: [&str; 7] = [
    "Portfolio",
    "Cumulative Returns (%)",
    "Expected Return (%)",
    "Volatility of Return (%)",
    "Max Drawdown (%)",
    "Sharpe Ratio",
    "VaR 99% of Return (%)",
];

fn invalid(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_meta(out: &mut impl Write, meta: &[(&str, String)]) -> Result<(), FormatError> {
    for (k, v) in meta {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, FormatError> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?)
}

/// `# key=value` lines at the top of a file.
pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>, FormatError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l[1..].trim().split_once('='))
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .collect())
}

fn parse_f64(path: &Path, field: &str, what: &str) -> Result<f64, FormatError> {
    field
        .parse()
        .map_err(|_| invalid(path, format!("{what} `{field}` is not a number")))
}

pub fn write_portfolio(path: &Path, portfolio: &Portfolio) -> Result<(), FormatError> {
    let mut out = create(path)?;
    write_meta(&mut out, &[("label", portfolio.label.clone())])?;
    let mut w = csv_writer(out);
    w.write_record(["ticker", "weight"])?;
    for (t, x) in portfolio.tickers.iter().zip(&portfolio.weights) {
        w.write_record([t.clone(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a portfolio file. Extra columns (such as `z`) are ignored; the
/// label comes from the `label` metadata, falling back to the file stem.
pub fn read_portfolio(path: &Path) -> Result<Portfolio, FormatError> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(path, format!("missing `{name}` column")))
    };
    let (ti, wi) = (col("ticker")?, col("weight")?);
    let mut tickers = Vec::new();
    let mut weights = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        tickers.push(rec[ti].to_owned());
        weights.push(parse_f64(path, &rec[wi], "weight")?);
    }
    let label = read_meta(path)?
        .remove("label")
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    Portfolio::new(label, tickers, weights).map_err(|e| invalid(path, e.to_string()))
}

pub fn write_cardinality_solution(path: &Path, label: &str, sol: &CardinalitySolution) -> Result<(), FormatError> {
    let mut out = create(path)?;
    let mut meta = vec![
        ("label", label.to_owned()),
        ("k", sol.z.iter().filter(|z| **z).count().to_string()),
        ("status", format!("{:?}", sol.status)),
        ("optimality_gap", sol.optimality_gap.to_string()),
        ("variance", sol.variance.to_string()),
        ("expected_return", sol.expected_return.to_string()),
        ("nodes_explored", sol.stats.nodes_explored.to_string()),
    ];
    if let Some(eps) = sol.epsilon {
        meta.push(("epsilon", eps.to_string()));
    }
    write_meta(&mut out, &meta)?;
    let mut w = csv_writer(out);
    w.write_record(["ticker", "weight", "z"])?;
    for ((t, x), z) in sol.portfolio.tickers.iter().zip(&sol.portfolio.weights).zip(&sol.z) {
        w.write_record([t.clone(), x.to_string(), u8::from(*z).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_frontier(path: &Path, frontier: &Frontier) -> Result<(), FormatError> {
    let out = create(path)?;
    let mut w = csv_writer(out);
    let mut header = vec!["epsilon".to_owned(), "achieved_return".into(), "variance".into(), "gap".into()];
    header.extend(frontier.tickers.iter().cloned());
    w.write_record(&header)?;
    for p in &frontier.points {
        let mut row = vec![
            p.epsilon.to_string(),
            p.achieved_return.to_string(),
            p.variance.to_string(),
            p.gap.map(|g| g.to_string()).unwrap_or_default(),
        ];
        row.extend(p.portfolio.weights.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One frontier row as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRow {
    pub epsilon: f64,
    pub achieved_return: f64,
    pub variance: f64,
    pub gap: Option<f64>,
    pub weights: Vec<f64>,
}

pub fn read_frontier(path: &Path) -> Result<(Vec<String>, Vec<FrontierRow>), FormatError> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "epsilon" {
        return Err(invalid(path, "not a frontier file"));
    }
    let tickers: Vec<String> = headers.iter().skip(4).map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| parse_f64(path, &rec[i], &headers[i]);
        rows.push(FrontierRow {
            epsilon: num(0)?,
            achieved_return: num(1)?,
            variance: num(2)?,
            gap: if rec[3].is_empty() { None } else { Some(num(3)?) },
            weights: (4..rec.len()).map(num).collect::<Result<_, _>>()?,
        });
    }
    Ok((tickers, rows))
}

pub fn write_moments(path: &Path, moments: &Moments) -> Result<(), FormatError> {
    let mut w = csv_writer(create(path)?);
    let mut header = vec!["ticker".to_owned(), "mu".into()];
    header.extend(moments.tickers().iter().cloned());
    w.write_record(&header)?;
    for (i, t) in moments.tickers().iter().enumerate() {
        let mut row = vec![t.clone(), moments.mu()[i].to_string()];
        row.extend(moments.cov().row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_moments(path: &Path) -> Result<Moments, FormatError> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let tickers: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    let n = tickers.len();
    let mut mu = Vec::with_capacity(n);
    let mut cov = Vec::with_capacity(n * n);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 2 || rec[0] != *tickers.get(i).map(String::as_str).unwrap_or("") {
            return Err(invalid(path, format!("row {} does not match the header", i + 1)));
        }
        mu.push(parse_f64(path, &rec[1], "mu")?);
        for j in 0..n {
            cov.push(parse_f64(path, &rec[j + 2], "covariance")?);
        }
    }
    if mu.len() != n {
        return Err(invalid(path, format!("{} rows for {} tickers", mu.len(), n)));
    }
    Moments::new(tickers, DVector::from_vec(mu), DMatrix::from_row_slice(n, n, &cov))
        .map_err(|e| invalid(path, e.to_string()))
}

pub fn write_metrics_table(path: &Path, rows: &[(String, MetricsReport)]) -> Result<(), FormatError> {
    let mut w = csv_writer(create(path)?);
    w.write_record(METRICS_HEADER)?;
    for (label, m) in rows {
        w.write_record([
            label.clone(),
            m.cumulative_return.to_string(),
            m.expected_return.to_string(),
            m.volatility.to_string(),
            m.max_drawdown.to_string(),
            m.sharpe.to_string(),
            m.var99.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_table(path: &Path) -> Result<Vec<(String, MetricsReport)>, FormatError> {
    let mut r = csv_reader(path)?;
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(invalid(path, "unexpected metrics header"));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| parse_f64(path, &rec[i], METRICS_HEADER[i]);
            Ok((
                rec[0].to_owned(),
                MetricsReport {
                    cumulative_return: num(1)?,
                    expected_return: num(2)?,
                    volatility: num(3)?,
                    max_drawdown: num(4)?,
                    sharpe: num(5)?,
                    var99: num(6)?,
                },
            ))
        })
        .collect()
}

/// Human-readable table with two decimals, as tab-separated text.
pub fn render_metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("\tCumulative Returns\tExpected Return\tVolatility of Return\tMax Drawdown\tSharpe Ratio\tVaR 99% of Return\n");
    for (label, m) in rows {
        out.push_str(&format!(
            "{label}\t{:.2}%\t{:.2}%\t{:.2}%\t{:.2}%\t{:.2}\t{:.2}%\n",
            m.cumulative_return, m.expected_return, m.volatility, m.max_drawdown, m.sharpe, m.var99
        ));
    }
    out
}

/// Writes curves sharing one date grid as columns.
pub fn write_curves(path: &Path, curves: &[(String, WealthCurve)]) -> Result<(), FormatError> {
    let Some((_, first)) = curves.first() else {
        return Err(invalid(path, "no curves to write"));
    };
    if let Some((label, _)) = curves.iter().find(|(_, c)| c.dates != first.dates) {
        return Err(invalid(path, format!("curve `{label}` has a different date grid")));
    }
    let mut w = csv_writer(create(path)?);
    let mut header = vec!["date".to_owned()];
    header.extend(curves.iter().map(|(l, _)| l.clone()));
    w.write_record(&header)?;
    for (t, d) in first.dates.iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend(curves.iter().map(|(_, c)| c.values[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<(String, WealthCurve)>, FormatError> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut dates = Vec::new();
    let mut columns = vec![Vec::new(); labels.len()];
    for rec in r.records() {
        let rec = rec?;
        dates.push(
            NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|_| invalid(path, format!("bad date `{}`", &rec[0])))?,
        );
        for (k, col) in columns.iter_mut().enumerate() {
            col.push(parse_f64(path, &rec[k + 1], &labels[k])?);
        }
    }
    labels
        .into_iter()
        .zip(columns)
        .map(|(l, v)| {
            WealthCurve::new(dates.clone(), v)
                .map(|c| (l, c))
                .map_err(|e| invalid(path, e.to_string()))
        })
        .collect()
}

pub fn read_sector_map(path: &Path) -> Result<BTreeMap<String, String>, FormatError> {
    let mut r = csv_reader(path)?;
    let mut map = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(invalid(path, "expected ticker,sector rows"));
        }
        map.insert(rec[0].to_owned(), rec[1].to_owned());
    }
    Ok(map)
}

pub fn write_sector_allocation(path: &Path, rows: &[(String, BTreeMap<String, f64>)]) -> Result<(), FormatError> {
    let mut w = csv_writer(create(path)?);
    w.write_record(["portfolio", "sector", "weight"])?;
    for (label, sectors) in rows {
        for (s, x) in sectors {
            w.write_record([label.clone(), s.clone(), x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_tally(path: &Path, tally: &UniverseTally) -> Result<(), FormatError> {
    let mut out = create(path)?;
    write_meta(&mut out, &[("num_calls", tally.num_calls.to_string())])?;
    let mut ranked: Vec<(&String, &usize)> = tally.counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut w = csv_writer(out);
    w.write_record(["ticker", "count"])?;
    for (t, c) in ranked {
        w.write_record([t.clone(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights(path: &Path, raw: &RawWeights, normalized: &[f64]) -> Result<(), FormatError> {
    let mut out = create(path)?;
    write_meta(&mut out, &[("raw_sum", raw.sum().to_string())])?;
    let mut w = csv_writer(out);
    w.write_record(["ticker", "raw_weight", "weight"])?;
    for ((t, r), x) in raw.tickers.iter().zip(&raw.weights).zip(normalized) {
        w.write_record([t.clone(), r.to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One ticker per line.
pub fn write_ticker_list(path: &Path, tickers: &[String]) -> Result<(), FormatError> {
    let mut out = create(path)?;
    for t in tickers {
        writeln!(out, "{t}")?;
    }
    out.flush()?;
    Ok(())
}

//! Out-of-sample evaluation of fixed-weight portfolios.
//!
//! Portfolios are rebalanced to their target weights every week, so the
//! portfolio return in week `t` is `wᵀ rₜ`. Metrics are reported in percent
//! except the Sharpe ratio, which is annualised with `√52` and a zero
//! risk-free rate.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::BacktestError;
use crate::market_data::ReturnPanel;
use crate::optimizer::Portfolio;

pub const WEEKS_PER_YEAR: f64 = 52.0;
/// Tail probability for the historical value-at-risk column.
pub const VAR_LEVEL: f64 = 0.01;

/// Index benchmarks as (display label, series ticker).
pub const INDEX_BENCHMARKS: [(&str, &str); 3] = [
    ("S&P 500", "^GSPC"),
    ("Dow Jones", "^DJI"),
    ("NASDAQ", "^IXIC"),
];

/// Funds averaged into the "Popular Investment Funds" benchmark.
pub const POPULAR_FUNDS: [&str; 13] = [
    "VT", "FSPGX", "VTI", "FUQIX", "VMVAX", "FCNTX", "VHGEX", "FWWFX", "PRGSX", "MDGCX", "OLGAX", "FGIKX",
    "VDIGX",
];

/// Weekly returns stamped with their week-end dates. `anchor` is the date
/// the first return is measured from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub anchor: NaiveDate,
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
}

/// Index levels starting at 1.0 on the anchor date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthCurve {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl WealthCurve {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self, BacktestError> {
        if dates.len() != values.len() {
            return Err(BacktestError::Length(format!(
                "{} dates for {} values",
                dates.len(),
                values.len()
            )));
        }
        if values.is_empty() {
            return Err(BacktestError::Empty);
        }
        if (values[0] - 1.0).abs() > 1e-12 {
            return Err(BacktestError::Misaligned(format!("curve starts at {} instead of 1", values[0])));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(BacktestError::TotalLoss { index, value });
        }
        Ok(Self { dates, values })
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("curves are nonempty")
    }

    /// Period-over-period returns implied by the curve.
    pub fn returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }
}

/// `rₜ = wᵀ rₜ` for every week in the panel.
pub fn portfolio_returns(portfolio: &Portfolio, panel: &ReturnPanel) -> Result<ReturnSeries, BacktestError> {
    let columns = portfolio
        .tickers
        .iter()
        .map(|t| {
            panel
                .ticker_index(t)
                .ok_or_else(|| BacktestError::MissingTicker(t.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let r = panel.returns();
    let returns = (0..r.nrows())
        .map(|t| {
            columns
                .iter()
                .zip(&portfolio.weights)
                .map(|(&c, w)| w * r[(t, c)])
                .sum()
        })
        .collect();
    Ok(ReturnSeries {
        anchor: panel.anchor(),
        dates: panel.dates().to_vec(),
        returns,
    })
}

/// Return series of one panel column.
pub fn asset_returns(panel: &ReturnPanel, ticker: &str) -> Result<ReturnSeries, BacktestError> {
    let c = panel
        .ticker_index(ticker)
        .ok_or_else(|| BacktestError::MissingTicker(ticker.to_owned()))?;
    Ok(ReturnSeries {
        anchor: panel.anchor(),
        dates: panel.dates().to_vec(),
        returns: panel.returns().column(c).iter().copied().collect(),
    })
}

/// `V₀ = 1`, `Vₜ = Π_{s≤t}(1 + r_s)`.
pub fn wealth_values(returns: &[f64]) -> Result<Vec<f64>, BacktestError> {
    if returns.is_empty() {
        return Err(BacktestError::Empty);
    }
    let mut values = Vec::with_capacity(returns.len() + 1);
    let mut v = 1.0;
    values.push(v);
    for (index, &r) in returns.iter().enumerate() {
        if !(r > -1.0) {
            return Err(BacktestError::TotalLoss { index, value: r });
        }
        v *= 1.0 + r;
        values.push(v);
    }
    Ok(values)
}

pub fn wealth_curve(series: &ReturnSeries) -> Result<WealthCurve, BacktestError> {
    let values = wealth_values(&series.returns)?;
    let dates = std::iter::once(series.anchor).chain(series.dates.iter().copied()).collect();
    WealthCurve::new(dates, values)
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Final wealth × 100.
    pub cumulative_return: f64,
    /// Mean weekly return, percent.
    pub expected_return: f64,
    /// Sample standard deviation of weekly returns, percent.
    pub volatility: f64,
    /// Worst peak-to-trough decline, percent (≤ 0).
    pub max_drawdown: f64,
    pub sharpe: f64,
    /// Historical 1% quantile of weekly returns, percent.
    pub var99: f64,
}

pub fn compute_metrics(returns: &[f64]) -> Result<MetricsReport, BacktestError> {
    let n = returns.len();
    if n < 2 {
        return Err(BacktestError::TooFewObservations { needed: 2, found: n });
    }
    let wealth = wealth_values(returns)?;
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(BacktestError::ZeroVolatility);
    }
    Ok(MetricsReport {
        cumulative_return: 100.0 * wealth[n],
        expected_return: 100.0 * mean,
        volatility: 100.0 * std,
        max_drawdown: 100.0 * max_drawdown(&wealth),
        sharpe: annualized_sharpe(mean, std),
        var99: 100.0 * empirical_quantile(returns, VAR_LEVEL),
    })
}

/// `(mean / std) · √52`.
pub fn annualized_sharpe(mean: f64, std: f64) -> f64 {
    mean / std * WEEKS_PER_YEAR.sqrt()
}

/// `min over t of (Vₜ / max_{s≤t} V_s − 1)`, as a fraction.
pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in wealth {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

/// Quantile with linear interpolation between order statistics at
/// position `h = (n − 1)·p`.
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise mean of wealth curves on a shared date grid.
pub fn benchmark_average(curves: &[WealthCurve]) -> Result<WealthCurve, BacktestError> {
    let first = curves.first().ok_or(BacktestError::Empty)?;
    if let Some(bad) = curves.iter().find(|c| c.dates != first.dates) {
        return Err(BacktestError::Misaligned(format!(
            "grid of {} points starting {:?} differs from {} points starting {:?}",
            bad.dates.len(),
            bad.dates.first(),
            first.dates.len(),
            first.dates.first()
        )));
    }
    let k = curves.len() as f64;
    let values = (0..first.values.len())
        .map(|t| curves.iter().map(|c| c.values[t]).sum::<f64>() / k)
        .collect();
    WealthCurve::new(first.dates.clone(), values)
}

/// Index and fund benchmarks over one evaluation window.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    pub index_curves: Vec<(String, WealthCurve)>,
    pub fund_curves: Vec<(String, WealthCurve)>,
    pub fund_average: Option<WealthCurve>,
    /// Configured series absent from the panel.
    pub missing: Vec<String>,
}

impl BenchmarkSet {
    /// Builds curves for every configured series present in `panel`; absent
    /// series are listed in `missing` rather than failing the whole set.
    pub fn from_panel(
        panel: &ReturnPanel,
        indices: &[(String, String)],
        funds: &[String],
    ) -> Result<Self, BacktestError> {
        let mut missing = Vec::new();
        let mut curve_for = |ticker: &str| -> Result<Option<WealthCurve>, BacktestError> {
            match asset_returns(panel, ticker) {
                Ok(series) => wealth_curve(&series).map(Some),
                Err(BacktestError::MissingTicker(t)) => {
                    log::warn!("benchmark series `{t}` not found; omitted");
                    missing.push(t);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        let mut index_curves = Vec::new();
        for (label, ticker) in indices {
            if let Some(c) = curve_for(ticker)? {
                index_curves.push((label.clone(), c));
            }
        }
        let mut fund_curves = Vec::new();
        for ticker in funds {
            if let Some(c) = curve_for(ticker)? {
                fund_curves.push((ticker.clone(), c));
            }
        }
        let fund_average = if fund_curves.is_empty() {
            None
        } else {
            let curves: Vec<WealthCurve> = fund_curves.iter().map(|(_, c)| c.clone()).collect();
            Some(benchmark_average(&curves)?)
        };
        Ok(Self {
            index_curves,
            fund_curves,
            fund_average,
            missing,
        })
    }
}

/// Sums portfolio weights per sector.
pub fn sector_allocation(
    portfolio: &Portfolio,
    sectors: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>, BacktestError> {
    let mut out = BTreeMap::new();
    for (t, w) in portfolio.tickers.iter().zip(&portfolio.weights) {
        let sector = sectors
            .get(t)
            .ok_or_else(|| BacktestError::UnmappedTicker(t.clone()))?;
        *out.entry(sector.clone()).or_insert(0.0) += w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, 1, day).unwrap()
    }

    fn panel() -> ReturnPanel {
        ReturnPanel::new(
            d(1),
            vec![d(8), d(15)],
            vec!["A".into(), "B".into()],
            DMatrix::from_row_slice(2, 2, &[0.02, 0.0, -0.01, 0.03]),
        )
        .unwrap()
    }

    #[test]
    fn portfolio_return_examples() {
        let p = panel();
        let single = Portfolio::new("x", vec!["B".into()], vec![1.0]).unwrap();
        assert_eq!(portfolio_returns(&single, &p).unwrap().returns, [0.0, 0.03]);
        let eq = Portfolio::new("x", vec!["A".into(), "B".into()], vec![0.5, 0.5]).unwrap();
        assert_eq!(portfolio_returns(&eq, &p).unwrap().returns[0], 0.01);
        let bad = Portfolio::new("x", vec!["C".into()], vec![1.0]).unwrap();
        assert!(matches!(portfolio_returns(&bad, &p), Err(BacktestError::MissingTicker(_))));
    }

    #[test]
    fn wealth_examples() {
        let w = wealth_values(&[0.01, -0.01]).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 1.01).abs() < 1e-15);
        assert!((w[2] - 0.9999).abs() < 1e-15);
        assert_eq!(wealth_values(&[0.0; 3]).unwrap(), [1.0; 4]);
        assert!(matches!(wealth_values(&[0.1, -1.0]), Err(BacktestError::TotalLoss { index: 1, .. })));
        let curve = wealth_curve(&ReturnSeries {
            anchor: d(1),
            dates: vec![d(8)],
            returns: vec![0.05],
        })
        .unwrap();
        assert_eq!(curve.dates, [d(1), d(8)]);
    }

    #[test]
    fn drawdown_and_quantile() {
        assert_eq!(max_drawdown(&[1.0, 1.2, 0.9, 1.1]), 0.9 / 1.2 - 1.0);
        assert_eq!(max_drawdown(&[1.0, 1.0, 1.5]), 0.0);
        let q = empirical_quantile(&[0.0, -0.02, 0.01, -0.04], 0.01);
        assert!((q - (-0.04 + 0.03 * 0.02)).abs() < 1e-15);
    }

    #[test]
    fn metrics_reject_degenerate_series() {
        assert!(matches!(compute_metrics(&[0.01]), Err(BacktestError::TooFewObservations { .. })));
        assert!(matches!(compute_metrics(&[0.01, 0.01]), Err(BacktestError::ZeroVolatility)));
    }

    #[test]
    fn averages() {
        let a = WealthCurve::new(vec![d(1), d(8)], vec![1.0, 1.1]).unwrap();
        let b = WealthCurve::new(vec![d(1), d(8)], vec![1.0, 0.9]).unwrap();
        let avg = benchmark_average(&[a.clone(), b]).unwrap();
        assert!((avg.values[1] - 1.0).abs() < 1e-15);
        assert_eq!(benchmark_average(std::slice::from_ref(&a)).unwrap(), a);
        let c = WealthCurve::new(vec![d(1), d(15)], vec![1.0, 1.0]).unwrap();
        assert!(matches!(benchmark_average(&[a, c]), Err(BacktestError::Misaligned(_))));
    }

    #[test]
    fn benchmarks_skip_missing_series() {
        let set = BenchmarkSet::from_panel(
            &panel(),
            &[("Index".into(), "A".into()), ("Other".into(), "^XYZ".into())],
            &["B".into()],
        )
        .unwrap();
        assert_eq!(set.index_curves.len(), 1);
        assert_eq!(set.missing, ["^XYZ"]);
        assert_eq!(set.fund_average.unwrap(), set.fund_curves[0].1);
    }

    #[test]
    fn sectors() {
        let p = Portfolio::new("x", vec!["A".into(), "B".into()], vec![0.6, 0.4]).unwrap();
        let same = BTreeMap::from([("A".into(), "Tech".into()), ("B".into(), "Tech".into())]);
        assert_eq!(sector_allocation(&p, &same).unwrap(), BTreeMap::from([("Tech".into(), 1.0)]));
        let split = BTreeMap::from([("A".into(), "Tech".into()), ("B".into(), "Energy".into())]);
        let got = sector_allocation(&p, &split).unwrap();
        assert_eq!(got["Tech"], 0.6);
        assert_eq!(got["Energy"], 0.4);
        let partial = BTreeMap::from([("A".into(), "Tech".into())]);
        assert!(matches!(sector_allocation(&p, &partial), Err(BacktestError::UnmappedTicker(_))));
    }
}

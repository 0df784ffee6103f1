//! Price ingestion, weekly resampling, simple returns, evaluation windows and
//! moment estimation.
//!
//! Panels are dense `dates × tickers` matrices. Every type here is immutable
//! once built and every operation is a pure function of its inputs.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Symmetry tolerance accepted by [`Moments::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue tolerated before a covariance matrix counts as indefinite.
pub const PSD_TOL: f64 = -1e-10;
/// Diagonal shift added on top of `-λ_min` when an estimated covariance is repaired.
pub const PSD_JITTER: f64 = 1e-10;

/// Adjusted close prices, one row per date and one column per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    prices: DMatrix<f64>,
}

impl PricePanel {
    /// Builds a panel, checking that dates strictly increase and that every
    /// price is finite and positive.
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        prices: DMatrix<f64>,
    ) -> Result<Self, DataError> {
        check_shape(&dates, &tickers, &prices)?;
        if let Some((i, j)) = find_cell(&prices, |p| !(p.is_finite() && p > 0.0)) {
            return Err(DataError::Parse {
                line: 0,
                message: format!(
                    "price for {} on {} is not positive: {}",
                    tickers[j],
                    dates[i],
                    prices[(i, j)]
                ),
            });
        }
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    /// Column of prices for `ticker`, if present.
    pub fn series(&self, ticker: &str) -> Option<Vec<f64>> {
        let j = self.tickers.iter().position(|t| t == ticker)?;
        Some(self.prices.column(j).iter().copied().collect())
    }

    /// Restricts the panel to the named tickers, in the given order.
    pub fn select(&self, tickers: &[String]) -> Result<Self, DataError> {
        let idx = column_indices(&self.tickers, tickers)?;
        let prices = self.prices.select_columns(idx.iter());
        Ok(Self {
            dates: self.dates.clone(),
            tickers: tickers.to_vec(),
            prices,
        })
    }
}

/// Weekly simple returns. `anchor` is the date of the price the first
/// return is measured from, so a panel built from `n` prices has `n - 1` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    anchor: NaiveDate,
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    returns: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(
        anchor: NaiveDate,
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        returns: DMatrix<f64>,
    ) -> Result<Self, DataError> {
        check_shape(&dates, &tickers, &returns)?;
        if dates.first().is_some_and(|d| *d <= anchor) {
            return Err(DataError::Parse {
                line: 0,
                message: format!("anchor {anchor} is not before the first return date"),
            });
        }
        if let Some((i, j)) = find_cell(&returns, |r| !(r.is_finite() && r > -1.0)) {
            return Err(DataError::Parse {
                line: 0,
                message: format!(
                    "return for {} on {} is not above -1: {}",
                    tickers[j],
                    dates[i],
                    returns[(i, j)]
                ),
            });
        }
        Ok(Self {
            anchor,
            dates,
            tickers,
            returns,
        })
    }

    pub fn anchor(&self) -> NaiveDate {
        self.anchor
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn select(&self, tickers: &[String]) -> Result<Self, DataError> {
        let idx = column_indices(&self.tickers, tickers)?;
        Ok(Self {
            anchor: self.anchor,
            dates: self.dates.clone(),
            tickers: tickers.to_vec(),
            returns: self.returns.select_columns(idx.iter()),
        })
    }
}

/// Expected weekly returns and their covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    tickers: Vec<String>,
    mu: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Moments {
    /// Validates dimensions, symmetry and positive semidefiniteness.
    pub fn new(tickers: Vec<String>, mu: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, DataError> {
        let n = tickers.len();
        if mu.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(DataError::InvalidMoments(format!(
                "{} tickers, mu of length {}, covariance {}x{}",
                n,
                mu.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if n == 0 {
            return Err(DataError::InvalidMoments("no assets".into()));
        }
        if mu.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(DataError::InvalidMoments("non-finite entry".into()));
        }
        let asym = max_asymmetry(&cov);
        if asym > SYMMETRY_TOL {
            return Err(DataError::InvalidMoments(format!(
                "covariance asymmetric by {asym:e}"
            )));
        }
        let min_eig = min_eigenvalue(&cov);
        if min_eig < PSD_TOL {
            return Err(DataError::InvalidMoments(format!(
                "covariance has eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { tickers, mu, cov })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    /// Moments of the assets at `indices`, in that order. Principal
    /// submatrices of a PSD matrix stay PSD, so no revalidation happens.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let tickers = indices.iter().map(|&i| self.tickers[i].clone()).collect();
        let mu = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.mu[i]));
        let cov = DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
            self.cov[(indices[r], indices[c])]
        });
        Self { tickers, mu, cov }
    }

    /// Moments restricted to the named tickers, in the given order.
    pub fn select(&self, tickers: &[String]) -> Result<Self, DataError> {
        let idx = column_indices(&self.tickers, tickers)?;
        Ok(self.subset(&idx))
    }

    /// `μᵀw`.
    pub fn expected_return(&self, weights: &[f64]) -> f64 {
        self.mu.iter().zip(weights).map(|(m, w)| m * w).sum()
    }

    /// `wᵀQw`.
    pub fn variance(&self, weights: &[f64]) -> f64 {
        let w = DVector::from_column_slice(weights);
        w.dot(&(&self.cov * &w))
    }
}

/// A labelled, inclusive date window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl PeriodSpec {
    pub fn new(label: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Result<Self, DataError> {
        let label = label.into();
        if start >= end {
            return Err(DataError::InvalidPeriod { label, start, end });
        }
        Ok(Self { label, start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// A ticker removed at load time and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedTicker {
    pub ticker: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    MissingPrice,
    NonPositivePrice,
}

/// Result of [`load_prices`]: the surviving panel plus the rejected tickers.
#[derive(Debug, Clone)]
pub struct LoadedPrices {
    pub panel: PricePanel,
    pub dropped: Vec<DroppedTicker>,
}

/// Reads a `date,TICKER1,TICKER2,...` table from disk.
pub fn load_prices(path: impl AsRef<Path>) -> Result<LoadedPrices, DataError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_prices(file)
}

/// Parses a price table. Rows may arrive in any order; they are sorted by
/// date. Blank, `NA`, `NaN` and `null` cells count as missing. A ticker with
/// any missing or non-positive cell is dropped rather than imputed.
pub fn read_prices<R: Read>(reader: R) -> Result<LoadedPrices, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(DataError::Parse {
            line: 1,
            message: "expected a date column followed by at least one ticker".into(),
        });
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    for t in &tickers {
        if t.is_empty() || !seen.insert(t.as_str()) {
            return Err(DataError::Parse {
                line: 1,
                message: format!("empty or duplicate ticker header `{t}`"),
            });
        }
    }

    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| {
            DataError::Parse {
                line,
                message: format!("bad date `{}`: {e}", &record[0]),
            }
        })?;
        let mut cells = Vec::with_capacity(tickers.len());
        for field in record.iter().skip(1) {
            cells.push(parse_cell(field).map_err(|message| DataError::Parse { line, message })?);
        }
        rows.push((date, cells));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyPanel);
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DataError::Parse {
            line: 0,
            message: format!("duplicate date {}", w[0].0),
        });
    }

    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, ticker) in tickers.iter().enumerate() {
        let mut reason = None;
        for (_, cells) in &rows {
            match cells[j] {
                None => {
                    reason = Some(DropReason::MissingPrice);
                    break;
                }
                Some(p) if p <= 0.0 => reason = reason.or(Some(DropReason::NonPositivePrice)),
                Some(_) => {}
            }
        }
        match reason {
            Some(reason) => dropped.push(DroppedTicker {
                ticker: ticker.clone(),
                reason,
            }),
            None => keep.push(j),
        }
    }
    if keep.is_empty() {
        return Err(DataError::NoSurvivors);
    }
    for d in &dropped {
        log::warn!("dropping {} ({:?})", d.ticker, d.reason);
    }

    let dates: Vec<NaiveDate> = rows.iter().map(|(d, _)| *d).collect();
    let prices = DMatrix::from_fn(rows.len(), keep.len(), |i, k| {
        rows[i].1[keep[k]].expect("complete column")
    });
    let tickers = keep.iter().map(|&j| tickers[j].clone()).collect();
    Ok(LoadedPrices {
        panel: PricePanel::new(dates, tickers, prices)?,
        dropped,
    })
}

fn parse_cell(field: &str) -> Result<Option<f64>, String> {
    if field.is_empty() || ["na", "nan", "null", "n/a"].contains(&field.to_ascii_lowercase().as_str()) {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|e| format!("bad price `{field}`: {e}"))
}

/// Keeps the last available close of every ISO calendar week. A panel that
/// already has one row per week comes back unchanged.
pub fn resample_weekly(panel: &PricePanel) -> Result<PricePanel, DataError> {
    if panel.dates.is_empty() {
        return Err(DataError::EmptyPanel);
    }
    let week = |d: &NaiveDate| {
        let w = d.iso_week();
        (w.year(), w.week())
    };
    let mut keep = Vec::new();
    for i in 0..panel.dates.len() {
        let last_of_week = panel
            .dates
            .get(i + 1)
            .is_none_or(|next| week(next) != week(&panel.dates[i]));
        if last_of_week {
            keep.push(i);
        }
    }
    Ok(PricePanel {
        dates: keep.iter().map(|&i| panel.dates[i]).collect(),
        tickers: panel.tickers.clone(),
        prices: panel.prices.select_rows(keep.iter()),
    })
}

/// `r_t = P_t / P_{t-1} - 1` for every ticker.
pub fn compute_returns(panel: &PricePanel) -> Result<ReturnPanel, DataError> {
    let n = panel.dates.len();
    if n < 2 {
        return Err(DataError::TooFewRows { needed: 2, found: n });
    }
    let p = &panel.prices;
    let returns = DMatrix::from_fn(n - 1, p.ncols(), |i, j| p[(i + 1, j)] / p[(i, j)] - 1.0);
    Ok(ReturnPanel {
        anchor: panel.dates[0],
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        returns,
    })
}

/// Row-wise restriction of a dated panel to a [`PeriodSpec`].
pub trait SlicePeriod: Sized {
    fn slice_period(&self, spec: &PeriodSpec) -> Result<Self, DataError>;
}

fn period_rows(dates: &[NaiveDate], spec: &PeriodSpec) -> Result<(usize, usize), DataError> {
    let lo = dates.partition_point(|d| *d < spec.start);
    let hi = dates.partition_point(|d| *d <= spec.end);
    if lo >= hi {
        return Err(DataError::EmptyIntersection {
            label: spec.label.clone(),
            first: *dates.first().ok_or(DataError::EmptyPanel)?,
            last: *dates.last().ok_or(DataError::EmptyPanel)?,
        });
    }
    Ok((lo, hi))
}

impl SlicePeriod for PricePanel {
    fn slice_period(&self, spec: &PeriodSpec) -> Result<Self, DataError> {
        let (lo, hi) = period_rows(&self.dates, spec)?;
        Ok(Self {
            dates: self.dates[lo..hi].to_vec(),
            tickers: self.tickers.clone(),
            prices: self.prices.rows(lo, hi - lo).into_owned(),
        })
    }
}

impl SlicePeriod for ReturnPanel {
    /// The anchor of the slice is the date of the last row before it, so
    /// the returns still describe moves between consecutive closes.
    fn slice_period(&self, spec: &PeriodSpec) -> Result<Self, DataError> {
        let (lo, hi) = period_rows(&self.dates, spec)?;
        let anchor = if lo == 0 { self.anchor } else { self.dates[lo - 1] };
        Ok(Self {
            anchor,
            dates: self.dates[lo..hi].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns.rows(lo, hi - lo).into_owned(),
        })
    }
}

/// Convenience free function over [`SlicePeriod`].
pub fn slice_period<P: SlicePeriod>(panel: &P, spec: &PeriodSpec) -> Result<P, DataError> {
    panel.slice_period(spec)
}

/// Arithmetic mean and `n - 1` sample covariance of the return columns.
///
/// The covariance is symmetrised as `(Q + Qᵀ)/2`. Rank-deficient estimates
/// (more assets than observations) are expected and accepted; only when
/// rounding pushes the smallest eigenvalue below [`PSD_TOL`] is the diagonal
/// shifted up to `PSD_JITTER`.
pub fn estimate_moments(returns: &ReturnPanel) -> Result<Moments, DataError> {
    let r = &returns.returns;
    let (t, n) = r.shape();
    if t < 2 {
        return Err(DataError::TooFewRows { needed: 2, found: t });
    }
    let mu = DVector::from_iterator(n, r.column_iter().map(|c| c.sum() / t as f64));
    let centered = DMatrix::from_fn(t, n, |i, j| r[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (t - 1) as f64;
    let mut cov = (&cov + cov.transpose()) * 0.5;
    let min_eig = min_eigenvalue(&cov);
    if min_eig < PSD_TOL {
        let shift = PSD_JITTER - min_eig;
        log::warn!("covariance min eigenvalue {min_eig:e}; shifting diagonal by {shift:e}");
        for i in 0..n {
            cov[(i, i)] += shift;
        }
    }
    Ok(Moments {
        tickers: returns.tickers.clone(),
        mu,
        cov,
    })
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_shape(dates: &[NaiveDate], tickers: &[String], m: &DMatrix<f64>) -> Result<(), DataError> {
    if m.nrows() != dates.len() || m.ncols() != tickers.len() {
        return Err(DataError::Parse {
            line: 0,
            message: format!(
                "matrix is {}x{} but there are {} dates and {} tickers",
                m.nrows(),
                m.ncols(),
                dates.len(),
                tickers.len()
            ),
        });
    }
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(DataError::Parse {
            line: 0,
            message: format!("dates not strictly increasing at {}", w[1]),
        });
    }
    Ok(())
}

fn find_cell(m: &DMatrix<f64>, bad: impl Fn(f64) -> bool) -> Option<(usize, usize)> {
    (0..m.ncols())
        .flat_map(|j| (0..m.nrows()).map(move |i| (i, j)))
        .find(|&(i, j)| bad(m[(i, j)]))
}

fn column_indices(have: &[String], want: &[String]) -> Result<Vec<usize>, DataError> {
    want.iter()
        .map(|t| {
            have.iter()
                .position(|h| h == t)
                .ok_or_else(|| DataError::UnknownTicker(t.clone()))
        })
        .collect()
}

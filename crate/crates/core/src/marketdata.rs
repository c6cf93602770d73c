//! Adjusted-close price histories, return matrices, and evaluation windows.
//!
//! Price files are CSV with header `date,ticker,adjusted_close`, ISO-8601
//! dates, plain decimal prices. Returns are simple (arithmetic) per-period
//! returns `p_t / p_{t-1} - 1` computed on a common date grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::num::Scalar;
use crate::symbol::Symbol;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("price source {0} cannot be read: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("non-positive price {price} for {ticker} on {date}")]
    NonPositivePrice {
        ticker: Symbol,
        date: NaiveDate,
        price: f64,
    },
    #[error("ticker {0} has no rows in the requested range")]
    MissingTicker(Symbol),
    #[error("ticker {0} has fewer than two observations in the requested range")]
    InsufficientObservations(Symbol),
    #[error("duplicate price row for {ticker} on {date}")]
    DuplicateObservation { ticker: Symbol, date: NaiveDate },
    #[error("common date grid has fewer than two dates")]
    InsufficientOverlap,
    #[error("strict alignment: {ticker} is missing {date}")]
    MissingData { ticker: Symbol, date: NaiveDate },
    #[error("window {0} selects no rows")]
    EmptyWindow(WindowLabel),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// Half-open date interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateInterval {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Option<Self> {
        (start < end).then_some(DateInterval { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d < self.end
    }
}

/// Evaluation window role within a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WindowLabel {
    #[serde(rename = "in_sample")]
    InSample,
    #[serde(rename = "oos_1")]
    Oos1,
    #[serde(rename = "oos_2")]
    Oos2,
}

impl fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WindowLabel::InSample => "in_sample",
            WindowLabel::Oos1 => "oos_1",
            WindowLabel::Oos2 => "oos_2",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub label: WindowLabel,
    pub range: DateInterval,
}

/// Adjusted-close history for one ticker. Dates strictly increasing,
/// all prices positive, at least two observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    ticker: Symbol,
    observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn new(
        ticker: Symbol,
        observations: Vec<(NaiveDate, f64)>,
    ) -> Result<Self, MarketDataError> {
        if observations.len() < 2 {
            if observations.is_empty() {
                return Err(MarketDataError::MissingTicker(ticker));
            }
            return Err(MarketDataError::InsufficientObservations(ticker));
        }
        for pair in observations.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(MarketDataError::DuplicateObservation {
                    ticker,
                    date: pair[1].0,
                });
            }
        }
        if let Some(&(date, price)) = observations.iter().find(|(_, p)| *p <= 0.0) {
            return Err(MarketDataError::NonPositivePrice {
                ticker,
                date,
                price,
            });
        }
        Ok(PriceSeries {
            ticker,
            observations,
        })
    }

    pub fn ticker(&self) -> &Symbol {
        &self.ticker
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_date(&self) -> NaiveDate {
        self.observations[0].0
    }

    pub fn last_date(&self) -> NaiveDate {
        self.observations[self.observations.len() - 1].0
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.observations.iter().map(|(d, _)| *d)
    }
}

/// T x n matrix of simple per-period returns. Row `t` holds the returns
/// realized on `dates[t]`; columns follow `tickers` order (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix<F> {
    tickers: Vec<Symbol>,
    dates: Vec<NaiveDate>,
    values: Mat<F>,
}

impl<F: Scalar> ReturnsMatrix<F> {
    pub fn new(
        tickers: Vec<Symbol>,
        dates: Vec<NaiveDate>,
        values: Mat<F>,
    ) -> Result<Self, MarketDataError> {
        if values.nrows() != dates.len() || values.ncols() != tickers.len() {
            return Err(MarketDataError::EmptyInput("returns shape mismatch"));
        }
        Ok(ReturnsMatrix {
            tickers,
            dates,
            values,
        })
    }

    pub fn tickers(&self) -> &[Symbol] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &Mat<F> {
        &self.values
    }

    /// Number of periods (rows).
    pub fn periods(&self) -> usize {
        self.dates.len()
    }

    /// Number of assets (columns).
    pub fn assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn column_index(&self, ticker: &Symbol) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        self.values.col(j)
    }

    /// Row-restrict to a window, preserving ticker order.
    pub fn slice_window(&self, w: &WindowSpec) -> Result<Self, MarketDataError> {
        let keep: Vec<usize> = self
            .dates
            .iter()
            .enumerate()
            .filter(|(_, d)| w.range.contains(**d))
            .map(|(i, _)| i)
            .collect();
        if keep.is_empty() {
            return Err(MarketDataError::EmptyWindow(w.label));
        }
        let dates = keep.iter().map(|&i| self.dates[i]).collect();
        let values = Mat::from_fn(keep.len(), self.tickers.len(), |i, j| {
            self.values[(keep[i], j)]
        });
        Ok(ReturnsMatrix {
            tickers: self.tickers.clone(),
            dates,
            values,
        })
    }

    /// Column-restrict to the given tickers, in the given order.
    pub fn select_tickers(&self, tickers: &[Symbol]) -> Result<Self, MarketDataError> {
        let idx: Vec<usize> = tickers
            .iter()
            .map(|t| {
                self.column_index(t)
                    .ok_or_else(|| MarketDataError::MissingTicker(t.clone()))
            })
            .collect::<Result<_, _>>()?;
        let values = Mat::from_fn(self.dates.len(), idx.len(), |i, j| self.values[(i, idx[j])]);
        Ok(ReturnsMatrix {
            tickers: tickers.to_vec(),
            dates: self.dates.clone(),
            values,
        })
    }
}

/// How to reconcile series with differing date coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Keep only dates present in every series.
    Intersect,
    /// Error on any date missing from any series.
    Strict,
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    date: String,
    ticker: String,
    adjusted_close: String,
}

/// Load every ticker present in a price CSV, restricted to `range`.
pub fn load_price_file(
    path: &Path,
    range: Option<DateInterval>,
) -> Result<BTreeMap<Symbol, PriceSeries>, MarketDataError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| io_error(path, e))?;
    let mut raw: BTreeMap<Symbol, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for (idx, rec) in rdr.deserialize::<PriceRow>().enumerate() {
        let line = idx as u64 + 2; // header is line 1
        let row = rec.map_err(|e| MarketDataError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let date = NaiveDate::parse_from_str(row.date.trim(), "%Y-%m-%d").map_err(|e| {
            MarketDataError::MalformedRow {
                line,
                reason: format!("bad date {:?}: {e}", row.date),
            }
        })?;
        let price: f64 = row.adjusted_close.trim().parse().map_err(|e| {
            MarketDataError::MalformedRow {
                line,
                reason: format!("bad price {:?}: {e}", row.adjusted_close),
            }
        })?;
        let ticker = Symbol::new(&row.ticker);
        if price <= 0.0 {
            return Err(MarketDataError::NonPositivePrice {
                ticker,
                date,
                price,
            });
        }
        if range.is_none_or(|r| r.contains(date)) {
            raw.entry(ticker).or_default().push((date, price));
        }
    }
    let mut out = BTreeMap::new();
    for (ticker, mut obs) in raw {
        obs.sort_by_key(|(d, _)| *d);
        out.insert(ticker.clone(), PriceSeries::new(ticker, obs)?);
    }
    Ok(out)
}

fn io_error(path: &Path, e: csv::Error) -> MarketDataError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MarketDataError::Io(path.display().to_string(), io),
        other => MarketDataError::MalformedRow {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

/// Load specific tickers from a price CSV. Errors on the first requested
/// ticker with zero rows in range.
pub fn load_prices(
    path: &Path,
    tickers: &[Symbol],
    range: Option<DateInterval>,
) -> Result<BTreeMap<Symbol, PriceSeries>, MarketDataError> {
    let all = load_price_file(path, range)?;
    let mut out = BTreeMap::new();
    for t in tickers {
        match all.get(t) {
            Some(series) => {
                out.insert(t.clone(), series.clone());
            }
            None => return Err(MarketDataError::MissingTicker(t.clone())),
        }
    }
    Ok(out)
}

/// Tickers from `requested` with no rows in the loaded map.
pub fn missing_tickers(
    loaded: &BTreeMap<Symbol, PriceSeries>,
    requested: &[Symbol],
) -> Vec<Symbol> {
    requested
        .iter()
        .filter(|t| !loaded.contains_key(*t))
        .cloned()
        .collect()
}

/// Convert aligned price series into a matrix of simple returns.
///
/// Under [`Alignment::Intersect`] only dates present in every series
/// survive; under [`Alignment::Strict`] any missing date is an error.
/// Columns are ordered by ticker.
pub fn to_returns<F: Scalar>(
    series: &[PriceSeries],
    policy: Alignment,
) -> Result<ReturnsMatrix<F>, MarketDataError> {
    if series.is_empty() {
        return Err(MarketDataError::EmptyInput("no price series"));
    }
    let mut sorted: Vec<&PriceSeries> = series.iter().collect();
    sorted.sort_by(|a, b| a.ticker().cmp(b.ticker()));
    for pair in sorted.windows(2) {
        if pair[0].ticker() == pair[1].ticker() {
            return Err(MarketDataError::DuplicateObservation {
                ticker: pair[0].ticker().clone(),
                date: pair[0].first_date(),
            });
        }
    }
    let date_sets: Vec<BTreeSet<NaiveDate>> =
        sorted.iter().map(|s| s.dates().collect()).collect();
    let grid: Vec<NaiveDate> = match policy {
        Alignment::Intersect => {
            let mut it = date_sets.iter();
            let first = it.next().expect("non-empty").clone();
            it.fold(first, |acc, s| acc.intersection(s).copied().collect())
                .into_iter()
                .collect()
        }
        Alignment::Strict => {
            let union: BTreeSet<NaiveDate> =
                date_sets.iter().flat_map(|s| s.iter().copied()).collect();
            for (s, dates) in sorted.iter().zip(&date_sets) {
                if let Some(missing) = union.difference(dates).next() {
                    return Err(MarketDataError::MissingData {
                        ticker: s.ticker().clone(),
                        date: *missing,
                    });
                }
            }
            union.into_iter().collect()
        }
    };
    if grid.len() < 2 {
        return Err(MarketDataError::InsufficientOverlap);
    }
    let tickers: Vec<Symbol> = sorted.iter().map(|s| s.ticker().clone()).collect();
    let price_on: Vec<BTreeMap<NaiveDate, f64>> = sorted
        .iter()
        .map(|s| s.observations().iter().copied().collect())
        .collect();
    let t = grid.len() - 1;
    let values = Mat::from_fn(t, tickers.len(), |i, j| {
        let prev = price_on[j][&grid[i]];
        let cur = price_on[j][&grid[i + 1]];
        F::of(cur / prev - 1.0)
    });
    ReturnsMatrix::new(tickers, grid[1..].to_vec(), values)
}

/// Tickers whose intersected date grid loses more than `max_loss` (a
/// fraction) of their own observations inside `window`. Used for
/// run-report flags.
pub fn alignment_flags(
    series: &[PriceSeries],
    window: &DateInterval,
    max_loss: f64,
) -> Vec<Symbol> {
    if series.is_empty() {
        return Vec::new();
    }
    let mut grid: BTreeSet<NaiveDate> = series[0].dates().collect();
    for s in &series[1..] {
        let dates: BTreeSet<NaiveDate> = s.dates().collect();
        grid = grid.intersection(&dates).copied().collect();
    }
    grid.retain(|d| window.contains(*d));
    series
        .iter()
        .filter_map(|s| {
            let own = s.dates().filter(|d| window.contains(*d)).count();
            if own == 0 {
                return None;
            }
            let kept = s.dates().filter(|d| grid.contains(d)).count();
            let lost = (own - kept.min(own)) as f64 / own as f64;
            (lost > max_loss).then(|| s.ticker().clone())
        })
        .collect()
}

//! Daily OHLC price series: CSV ingestion, log-return state windows and
//! deterministic synthetic generators.
//!
//! CSV layout is `date,open,high,low,close,volume` with ISO-8601 dates, one bar
//! per line, dates strictly increasing.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

/// Log returns of open, high, low and close.
pub const FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcBar {
    fn is_consistent(&self) -> bool {
        self.high >= self.open.max(self.close) && self.low <= self.open.min(self.close)
    }

    fn prices_positive(&self) -> bool {
        [self.open, self.high, self.low, self.close]
            .iter()
            .all(|p| p.is_finite() && *p > 0.0)
    }

    fn features(&self) -> [f64; FEATURES] {
        [self.open, self.high, self.low, self.close]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub symbol: String,
    bars: Vec<OhlcBar>,
}

impl PriceSeries {
    /// Validates every bar and the strict date ordering.
    pub fn new(symbol: impl Into<String>, bars: Vec<OhlcBar>) -> Result<Self> {
        for (k, bar) in bars.iter().enumerate() {
            // Line numbers are reported as they would appear in a CSV file.
            let line = k + 2;
            if !bar.prices_positive() {
                return Err(Error::NonPositivePrice { line });
            }
            if !bar.is_consistent() {
                return Err(Error::OhlcInvariant { line });
            }
            if !(bar.volume >= 0.0) {
                return Err(Error::MalformedRow {
                    line,
                    reason: "negative volume".into(),
                });
            }
            if k > 0 && bar.date <= bars[k - 1].date {
                return Err(Error::NonMonotonicDate { line });
            }
        }
        Ok(Self {
            symbol: symbol.into(),
            bars,
        })
    }

    pub fn bars(&self) -> &[OhlcBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    /// Bars whose date falls inside the inclusive range. Either bound may be open.
    pub fn between(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> Result<Self> {
        let bars: Vec<OhlcBar> = self
            .bars
            .iter()
            .filter(|b| from.is_none_or(|f| b.date >= f) && to.is_none_or(|t| b.date <= t))
            .copied()
            .collect();
        if bars.is_empty() {
            return Err(Error::EmptyDateRange {
                from: from.map_or_else(|| "start".into(), |d| d.to_string()),
                to: to.map_or_else(|| "end".into(), |d| d.to_string()),
            });
        }
        Ok(Self {
            symbol: self.symbol.clone(),
            bars,
        })
    }
}

/// Reads a price series from CSV. The symbol is taken from the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, symbol)
}

pub fn read_csv<R: std::io::Read>(reader: R, symbol: impl Into<String>) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => return Err(Error::SeriesTooShort { needed: 2, got: 0 }),
        Some(h) => h?,
    };
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }

    let mut bars = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != CSV_HEADER.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| {
            Error::MalformedRow {
                line,
                reason: format!("bad date `{}`: {e}", &record[0]),
            }
        })?;
        let num = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::MalformedRow {
                line,
                reason: format!("bad {} `{}`: {e}", CSV_HEADER[i], &record[i]),
            })
        };
        let bar = OhlcBar {
            date,
            open: num(1)?,
            high: num(2)?,
            low: num(3)?,
            close: num(4)?,
            volume: num(5)?,
        };
        if !bar.prices_positive() {
            return Err(Error::NonPositivePrice { line });
        }
        if !bar.is_consistent() {
            return Err(Error::OhlcInvariant { line });
        }
        if !(bar.volume >= 0.0) {
            return Err(Error::MalformedRow {
                line,
                reason: "negative volume".into(),
            });
        }
        if bars.last().is_some_and(|prev: &OhlcBar| bar.date <= prev.date) {
            return Err(Error::NonMonotonicDate { line });
        }
        bars.push(bar);
    }

    if bars.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: bars.len(),
        });
    }
    Ok(PriceSeries {
        symbol: symbol.into(),
        bars,
    })
}

/// Writes the series in the same format `load_csv` reads. Floats use the
/// shortest representation that parses back to the identical value.
pub fn write_csv(series: &PriceSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_to(series, file)
}

pub fn write_csv_to<W: std::io::Write>(series: &PriceSeries, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for b in &series.bars {
        wtr.write_record([
            b.date.format("%Y-%m-%d").to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// The n×4 log-return state ending at bar `t_index`.
///
/// Row `i` (0-based) holds `ln(x[t-i] / x[t-i-1])` for each of open, high, low
/// and close, so row 0 is the most recent step and row `n-1` the oldest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    rows: usize,
    data: Vec<f64>,
    pub t_index: usize,
}

impl FeatureWindow {
    pub fn from_rows(rows: Vec<[f64; FEATURES]>, t_index: usize) -> Self {
        Self {
            rows: rows.len(),
            data: rows.into_iter().flatten().collect(),
            t_index,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn features(&self) -> usize {
        FEATURES
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * FEATURES..(i + 1) * FEATURES]
    }

    pub fn most_recent(&self) -> &[f64] {
        self.row(0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn feature_window(series: &PriceSeries, t: usize, n: usize) -> Result<FeatureWindow> {
    if n == 0 {
        return Err(Error::InvalidParameter("window length must be ≥ 1".into()));
    }
    if t < n {
        return Err(Error::InsufficientHistory { t, needed: n });
    }
    if t >= series.len() {
        return Err(Error::InvalidParameter(format!(
            "bar index {t} beyond series of length {}",
            series.len()
        )));
    }
    let bars = &series.bars;
    let mut data = Vec::with_capacity(n * FEATURES);
    for i in 0..n {
        let now = bars[t - i].features();
        let prev = bars[t - i - 1].features();
        data.extend(now.iter().zip(prev.iter()).map(|(a, b)| (a / b).ln()));
    }
    Ok(FeatureWindow {
        rows: n,
        data,
        t_index: t,
    })
}

fn synthetic_dates(len: usize) -> impl Iterator<Item = NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    (0..len as u64).map(move |k| start + Days::new(k))
}

/// Geometric Brownian motion closes with synthesized OHLC bars.
///
/// Normals come from `ChaCha8Rng::seed_from_u64(seed)` through
/// `rand_distr::StandardNormal`, two draws per step: `z` drives the close and
/// `w` sets the intraday band. Bar 0 has open = close = `s0`; afterwards
/// open = previous close, high = max(open, close)·e^b and
/// low = min(open, close)·e^-b with b = ½·sigma·√dt·|w|.
pub fn gbm_series(
    s0: f64,
    mu: f64,
    sigma: f64,
    dt: f64,
    len: usize,
    seed: u64,
) -> Result<PriceSeries> {
    if !(s0 > 0.0) || !(sigma >= 0.0) || !(dt > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(
            "gbm requires s0 > 0, sigma ≥ 0, dt > 0".into(),
        ));
    }
    if len < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift = (mu - 0.5 * sigma * sigma) * dt;
    let vol = sigma * dt.sqrt();

    let mut bars = Vec::with_capacity(len);
    let mut close = s0;
    let mut open = s0;
    for (k, date) in synthetic_dates(len).enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        let w: f64 = StandardNormal.sample(&mut rng);
        if k > 0 {
            open = close;
            close *= (drift + vol * z).exp();
        }
        let band = (0.5 * vol * w.abs()).exp();
        bars.push(OhlcBar {
            date,
            open,
            high: open.max(close) * band,
            low: open.min(close) / band,
            close,
            volume: 0.0,
        });
    }
    PriceSeries::new("GBM", bars)
}

/// `close_k = s0 + amplitude·sin(2πk/period)`, open = previous close,
/// high/low spanning open and close.
pub fn sinusoid_series(s0: f64, amplitude: f64, period: f64, len: usize) -> Result<PriceSeries> {
    if !(amplitude < s0) || !(amplitude >= 0.0) || !(period > 0.0) {
        return Err(Error::InvalidParameter(
            "sinusoid requires 0 ≤ amplitude < s0 and period > 0".into(),
        ));
    }
    if len < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: len });
    }
    let mut prev = s0;
    let bars = synthetic_dates(len)
        .enumerate()
        .map(|(k, date)| {
            let close = s0 + amplitude * (2.0 * PI * k as f64 / period).sin();
            let open = if k == 0 { close } else { prev };
            prev = close;
            OhlcBar {
                date,
                open,
                high: open.max(close),
                low: open.min(close),
                close,
                volume: 0.0,
            }
        })
        .collect();
    PriceSeries::new("SINE", bars)
}

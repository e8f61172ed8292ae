//! Monthly asset indices: CSV ingestion, synthetic generation and the
//! indicator streams that feed the environment state.

pub mod indicators;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use indicators::{macd, rsi, IndicatorFrame, DEFAULT_RSI_PERIODS};
use indicators::csv_io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Stocks,
    Property,
    InterestRate,
}

impl IndexKind {
    pub const ALL: [IndexKind; 3] = [IndexKind::Stocks, IndexKind::Property, IndexKind::InterestRate];

    pub fn file_stem(self) -> &'static str {
        match self {
            IndexKind::Stocks => "stocks",
            IndexKind::Property => "property",
            IndexKind::InterestRate => "interest",
        }
    }

    /// Default synthetic parameters, ordered like the historical indices:
    /// stocks grow fastest and swing most, the interest index least.
    pub fn default_synthetic(self) -> SyntheticSpec {
        let (drift, volatility) = match self {
            IndexKind::Stocks => (0.072, 0.15),
            IndexKind::Property => (0.055, 0.05),
            IndexKind::InterestRate => (0.025, 0.01),
        };
        SyntheticSpec {
            drift,
            volatility,
            months: DEFAULT_SERIES_MONTHS,
            seed: 0,
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

impl FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stocks" => Ok(IndexKind::Stocks),
            "property" => Ok(IndexKind::Property),
            "interest" | "interest_rate" => Ok(IndexKind::InterestRate),
            other => Err(Error::Config(format!("unknown index `{other}`"))),
        }
    }
}

/// 334 monthly steps need 335 levels.
pub const DEFAULT_SERIES_MONTHS: usize = 335;

pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(1992, 1, 1).unwrap()
}

/// A monthly index normalized to its first level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    kind: IndexKind,
    start_date: NaiveDate,
    values: Vec<f64>,
}

impl IndexSeries {
    /// Builds a series from raw levels, dividing every level by the first.
    pub fn from_levels(kind: IndexKind, start_date: NaiveDate, levels: &[f64]) -> Result<Self> {
        let first = *levels
            .first()
            .ok_or_else(|| Error::Domain(format!("{kind} series is empty")))?;
        if let Some((t, v)) = levels
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Domain(format!(
                "{kind} level at month {t} must be positive, got {v}"
            )));
        }
        Ok(Self {
            kind,
            start_date: first_of_month(start_date),
            values: levels.iter().map(|v| v / first).collect(),
        })
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date_at(&self, t: usize) -> NaiveDate {
        self.start_date + Months::new(t as u32)
    }

    pub fn value(&self, t: usize) -> Result<f64> {
        self.values.get(t).copied().ok_or(Error::Bounds {
            index: t,
            len: self.values.len(),
        })
    }

    /// Reads a `date,value` CSV with one row per month.
    ///
    /// Several rows inside one calendar month collapse to the last of them;
    /// a skipped month is a cadence error.
    pub fn ingest_csv(path: &Path, kind: IndexKind) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_io(path, e))?;
        let headers = reader.headers().map_err(|e| parse_err(path, 1, e))?.clone();
        if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "value" {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: format!("expected header `date,value`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }

        let mut start: Option<NaiveDate> = None;
        let mut prev: Option<(NaiveDate, i64)> = None;
        let mut levels: Vec<f64> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(path, line, e)
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != 2 {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("expected 2 fields, got {}", record.len()),
                });
            }
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|e| parse_err(path, line, format!("bad date `{}`: {e}", &record[0])))?;
            let level: f64 = record[1]
                .parse()
                .map_err(|e| parse_err(path, line, format!("bad value `{}`: {e}", &record[1])))?;
            if !(level.is_finite() && level > 0.0) {
                return Err(Error::Domain(format!(
                    "{}: line {line}: level must be positive, got {level}",
                    path.display()
                )));
            }
            let month = month_number(date);
            match prev {
                None => {
                    start = Some(date);
                    levels.push(level);
                }
                Some((prev_date, prev_month)) => {
                    if date <= prev_date {
                        return Err(Error::Cadence {
                            path: path.into(),
                            message: format!("line {line}: date {date} does not follow {prev_date}"),
                        });
                    }
                    match month - prev_month {
                        0 => *levels.last_mut().unwrap() = level,
                        1 => levels.push(level),
                        gap => {
                            return Err(Error::Cadence {
                                path: path.into(),
                                message: format!("line {line}: gap of {gap} months after {prev_date}"),
                            })
                        }
                    }
                }
            }
            prev = Some((date, month));
        }
        let start = start.ok_or_else(|| Error::Domain(format!("{}: no data rows", path.display())))?;
        Self::from_levels(kind, start, &levels)
    }

    /// Writes `date,value` rows; values use the shortest text that parses back
    /// to the same bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["date", "value"]).map_err(|e| csv_io(path, e))?;
        for (t, v) in self.values.iter().enumerate() {
            w.write_record([self.date_at(t).format("%Y-%m-%d").to_string(), v.to_string()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn parse_err(path: &Path, line: usize, e: impl fmt::Display) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: e.to_string(),
    }
}

fn first_of_month(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), d.month(), 1).unwrap()
}

fn month_number(d: NaiveDate) -> i64 {
    d.year() as i64 * 12 + d.month0() as i64
}

/// Geometric random walk parameters. `drift` is the annual log-growth and
/// `volatility` the annualized standard deviation of log returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub drift: f64,
    pub volatility: f64,
    /// Number of monthly levels, including the initial 1.0.
    pub months: usize,
    pub seed: u64,
}

pub fn synthesize_series(kind: IndexKind, spec: &SyntheticSpec) -> Result<IndexSeries> {
    if spec.months == 0 {
        return Err(Error::Domain("synthetic series needs at least one month".into()));
    }
    if !(spec.volatility >= 0.0) || !spec.drift.is_finite() || !spec.volatility.is_finite() {
        return Err(Error::Domain(format!(
            "invalid synthetic parameters drift={} volatility={}",
            spec.drift, spec.volatility
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mean = spec.drift / 12.0;
    let scale = spec.volatility / 12f64.sqrt();
    let mut log_level = 0.0_f64;
    let mut levels = Vec::with_capacity(spec.months);
    levels.push(1.0);
    for _ in 1..spec.months {
        let z: f64 = StandardNormal.sample(&mut rng);
        log_level += mean + scale * z;
        levels.push(log_level.exp());
    }
    IndexSeries::from_levels(kind, default_start_date(), &levels)
}

/// The three indices plus their precomputed indicator streams.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub stocks: IndexSeries,
    pub property: IndexSeries,
    pub interest: IndexSeries,
    pub indicators: IndicatorFrame,
}

impl MarketData {
    pub fn new(stocks: IndexSeries, property: IndexSeries, interest: IndexSeries, rsi_periods: usize) -> Result<Self> {
        let indicators = IndicatorFrame::compute([&stocks, &property, &interest], rsi_periods)?;
        Ok(Self {
            stocks,
            property,
            interest,
            indicators,
        })
    }

    /// Synthetic indices with the default parameters. Each index draws from
    /// its own stream derived from `seed`.
    pub fn synthetic(seed: u64, months: usize) -> Result<Self> {
        let [s, p, i] = IndexKind::ALL.map(|kind| {
            let spec = SyntheticSpec {
                months,
                seed: stream_seed(seed, kind),
                ..kind.default_synthetic()
            };
            synthesize_series(kind, &spec)
        });
        Self::new(s?, p?, i?, DEFAULT_RSI_PERIODS)
    }

    /// Noise-free exponential indices at the default drifts. Stocks dominate
    /// every other asset's return at every month.
    pub fn trend(months: usize) -> Result<Self> {
        let [s, p, i] = IndexKind::ALL.map(|kind| {
            let spec = SyntheticSpec {
                months,
                volatility: 0.0,
                ..kind.default_synthetic()
            };
            synthesize_series(kind, &spec)
        });
        Self::new(s?, p?, i?, DEFAULT_RSI_PERIODS)
    }

    pub fn series(&self, kind: IndexKind) -> &IndexSeries {
        match kind {
            IndexKind::Stocks => &self.stocks,
            IndexKind::Property => &self.property,
            IndexKind::InterestRate => &self.interest,
        }
    }

    pub fn len(&self) -> usize {
        self.stocks.len().min(self.property.len()).min(self.interest.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn stream_seed(seed: u64, kind: IndexKind) -> u64 {
    let salt = match kind {
        IndexKind::Stocks => 0x5354_4f43_4b53_u64,
        IndexKind::Property => 0x5052_4f50_u64,
        IndexKind::InterestRate => 0x494e_5452_u64,
    };
    seed.rotate_left(17) ^ salt
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_normalizes_by_first_level() {
        let f = write_tmp("date,value\n1992-01-01,100\n1992-02-01,110\n1992-03-01,121\n");
        let s = IndexSeries::ingest_csv(f.path(), IndexKind::Stocks).unwrap();
        assert_eq!(s.values()[0], 1.0);
        assert!((s.values()[1] - 1.1).abs() < 1e-15);
        assert!((s.values()[2] - 1.21).abs() < 1e-15);
    }

    #[test]
    fn ingest_single_row() {
        let f = write_tmp("date,value\n2000-06-30,42.5\n");
        let s = IndexSeries::ingest_csv(f.path(), IndexKind::Property).unwrap();
        assert_eq!(s.values(), &[1.0]);
        assert_eq!(s.start_date(), NaiveDate::from_ymd_opt(2000, 6, 1).unwrap());
    }

    #[test]
    fn ingest_rejects_zero_level() {
        let f = write_tmp("date,value\n1992-01-01,100\n1992-02-01,0\n");
        assert!(matches!(
            IndexSeries::ingest_csv(f.path(), IndexKind::Stocks),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ingest_reports_line_of_malformed_row() {
        let f = write_tmp("date,value\n1992-01-01,100\n1992-02-01,abc\n");
        match IndexSeries::ingest_csv(f.path(), IndexKind::Stocks) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_gaps_and_disorder() {
        let gap = write_tmp("date,value\n1992-01-01,100\n1992-03-01,101\n");
        assert!(matches!(
            IndexSeries::ingest_csv(gap.path(), IndexKind::Stocks),
            Err(Error::Cadence { .. })
        ));
        let back = write_tmp("date,value\n1992-02-01,100\n1992-01-01,101\n");
        assert!(matches!(
            IndexSeries::ingest_csv(back.path(), IndexKind::Stocks),
            Err(Error::Cadence { .. })
        ));
    }

    #[test]
    fn ingest_collapses_rows_within_a_month() {
        let f = write_tmp("date,value\n1992-01-01,100\n1992-01-31,105\n1992-02-29,110\n");
        let s = IndexSeries::ingest_csv(f.path(), IndexKind::Stocks).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.values()[1] - 110.0 / 105.0).abs() < 1e-15);
    }

    #[test]
    fn synthetic_without_noise_is_exponential() {
        let spec = SyntheticSpec {
            drift: 0.07,
            volatility: 0.0,
            months: 13,
            seed: 3,
        };
        let s = synthesize_series(IndexKind::Stocks, &spec).unwrap();
        assert!((s.values()[12] - 0.07f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SyntheticSpec {
            seed: 11,
            ..IndexKind::Stocks.default_synthetic()
        };
        let a = synthesize_series(IndexKind::Stocks, &spec).unwrap();
        let b = synthesize_series(IndexKind::Stocks, &spec).unwrap();
        assert_eq!(a, b);
        let c = synthesize_series(IndexKind::Stocks, &SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn synthetic_rejects_zero_months() {
        let spec = SyntheticSpec {
            months: 0,
            ..IndexKind::Stocks.default_synthetic()
        };
        assert!(matches!(synthesize_series(IndexKind::Stocks, &spec), Err(Error::Domain(_))));
    }
}

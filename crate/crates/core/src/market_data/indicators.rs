//! Moving-average and momentum indicators over monthly index levels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IndexSeries;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MACD_SLOW: usize = 26;
pub const MACD_FAST: usize = 12;
pub const DEFAULT_RSI_PERIODS: usize = 14;

/// Exponential moving average with smoothing `2 / (window + 1)`, seeded with
/// the first value.
pub fn ema<T: Scalar>(values: &[T], window: usize) -> Vec<T> {
    let alpha = T::of(2.0) / T::from_usize(window + 1).unwrap();
    let mut out = Vec::with_capacity(values.len());
    let mut acc = match values.first() {
        Some(&v) => v,
        None => return out,
    };
    out.push(acc);
    for &v in &values[1..] {
        acc = acc + alpha * (v - acc);
        out.push(acc);
    }
    out
}

/// `EMA26 - EMA12` at every month. Note the order: slow minus fast, so a
/// rising trend gives a negative value.
pub fn macd_series<T: Scalar>(values: &[T]) -> Vec<T> {
    let slow = ema(values, MACD_SLOW);
    let fast = ema(values, MACD_FAST);
    slow.into_iter().zip(fast).map(|(s, f)| s - f).collect()
}

pub fn macd(series: &IndexSeries, t: usize) -> Result<f64> {
    let len = series.len();
    if t >= len {
        return Err(Error::Bounds { index: t, len });
    }
    Ok(macd_series(&series.values()[..=t])[t])
}

/// Relative strength index at month `t` over the trailing `periods` monthly
/// changes. The window is clamped to `t` changes during warm-up.
///
/// Degenerate windows: no losses gives 100, no gains gives 0, a flat window
/// (or `t == 0`) gives 50.
pub fn rsi_at<T: Scalar>(values: &[T], t: usize, periods: usize) -> Result<T> {
    if periods == 0 {
        return Err(Error::Domain("rsi needs at least one period".into()));
    }
    if t >= values.len() {
        return Err(Error::Bounds {
            index: t,
            len: values.len(),
        });
    }
    let window = t.min(periods);
    let (mut gains, mut losses) = (T::zero(), T::zero());
    for k in (t + 1 - window)..=t {
        if window == 0 {
            break;
        }
        let change = values[k] - values[k - 1];
        if change > T::zero() {
            gains += change;
        } else {
            losses -= change;
        }
    }
    let hundred = T::of(100.0);
    let zero = T::zero();
    Ok(match (gains > zero, losses > zero) {
        (false, false) => T::of(50.0),
        (true, false) => hundred,
        (false, true) => zero,
        // both averages share the window length, so it cancels in the ratio
        (true, true) => hundred - hundred / (T::one() + gains / losses),
    })
}

pub fn rsi(series: &IndexSeries, t: usize, periods: usize) -> Result<f64> {
    rsi_at(series.values(), t, periods)
}

/// MACD and RSI streams for the three indices, in stocks/property/interest
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorFrame {
    pub macd: [Vec<f64>; 3],
    pub rsi: [Vec<f64>; 3],
    pub rsi_periods: usize,
}

impl IndicatorFrame {
    pub fn compute(series: [&IndexSeries; 3], rsi_periods: usize) -> Result<Self> {
        let macd = series.map(|s| macd_series(s.values()));
        let mut rsi: [Vec<f64>; 3] = Default::default();
        for (out, s) in rsi.iter_mut().zip(series) {
            *out = (0..s.len())
                .map(|t| rsi_at(s.values(), t, rsi_periods))
                .collect::<Result<_>>()?;
        }
        Ok(Self {
            macd,
            rsi,
            rsi_periods,
        })
    }

    pub fn len(&self) -> usize {
        self.macd.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record([
            "t",
            "macd_stocks",
            "rsi_stocks",
            "macd_property",
            "rsi_property",
            "macd_interest",
            "rsi_interest",
        ])
        .map_err(|e| csv_io(path, e))?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            for k in 0..3 {
                row.push(self.macd[k][t].to_string());
                row.push(self.rsi[k][t].to_string());
            }
            w.write_record(&row).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

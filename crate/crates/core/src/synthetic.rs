//! Deterministic, noiseless OHLCV fixtures for smoke tests and demos.

use std::f64::consts::TAU;

use chrono::{Datelike, Days, NaiveDate, Weekday};

use crate::dataset::{DateRange, SplitBoundaries};
use crate::ingest::OhlcvBar;

/// Weekdays starting at `start` (or the next weekday after it).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Bars following a sinusoidal mid price. Open trails close by half a day,
/// and the high/low spread itself oscillates on a shorter period.
pub fn sinusoid_bars(n_days: usize, start: NaiveDate, period: f64, level: f64, amplitude: f64) -> Vec<OhlcvBar> {
    let mid = |t: f64| level + amplitude * (TAU * t / period).sin();
    business_days(start, n_days)
        .into_iter()
        .enumerate()
        .map(|(t, date)| {
            let t = t as f64;
            let open = mid(t - 0.5);
            let close = mid(t);
            let spread = 0.05 * amplitude * (1.5 + 0.5 * (TAU * t / 23.0).sin());
            OhlcvBar {
                date,
                open,
                close,
                high: open.max(close) + spread,
                low: open.min(close) - spread,
                volume: 1e6 * (1.0 + 0.3 * (TAU * t / 30.0).sin()),
            }
        })
        .collect()
}

/// Contiguous date ranges covering the first `train` and next `validation`
/// fractions of `dates`, with the remainder as test.
pub fn fractional_boundaries(dates: &[NaiveDate], train: f64, validation: f64) -> SplitBoundaries {
    let n = dates.len();
    let a = ((n as f64 * train).round() as usize).clamp(1, n - 2);
    let b = ((n as f64 * (train + validation)).round() as usize).clamp(a + 1, n - 1);
    SplitBoundaries {
        train: DateRange { start: dates[0], end: dates[a - 1] },
        validation: DateRange { start: dates[a], end: dates[b - 1] },
        test: DateRange { start: dates[b], end: dates[n - 1] },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_are_consistent_weekdays() {
        let bars = sinusoid_bars(100, NaiveDate::from_ymd_opt(2015, 1, 3).unwrap(), 50.0, 100.0, 20.0);
        assert_eq!(bars.len(), 100);
        assert!(bars.iter().all(|b| b.is_consistent()));
        assert!(bars.iter().all(|b| !matches!(b.date.weekday(), Weekday::Sat | Weekday::Sun)));
        assert!(bars.windows(2).all(|w| w[0].date < w[1].date));
    }

    #[test]
    fn fractional_split_is_valid() {
        let dates = business_days(NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(), 600);
        let b = fractional_boundaries(&dates, 0.85, 0.10);
        b.validate().unwrap();
        assert_eq!(b.train.end, dates[509]);
        assert_eq!(b.validation.start, dates[510]);
        assert_eq!(b.test.start, dates[570]);
    }
}

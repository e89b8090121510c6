//! Moving-average indicators and the per-day feature matrix fed to the network.
//!
//! All indicators are computed on the close price. An [`IndicatorSeries`] has the
//! same length as its source; entries before `valid_from` are `NaN`.

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::OhlcvBar;

pub const SMA_WINDOWS: [usize; 4] = [5, 10, 20, 40];
pub const EMA_WINDOWS: [usize; 4] = [5, 10, 20, 40];
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;

/// Number of feature columns per day.
pub const N_FEATURES: usize = 14;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "open", "close", "low", "high", "volume", "sma5", "sma10", "sma20", "sma40", "ema5", "ema10",
    "ema20", "ema40", "macd",
];

pub const COL_OPEN: usize = 0;
pub const COL_CLOSE: usize = 1;
pub const COL_LOW: usize = 2;
pub const COL_HIGH: usize = 3;
pub const COL_VOLUME: usize = 4;

/// Columns of the three predicted prices, in prediction order (open, low, high).
pub const TARGET_COLUMNS: [usize; 3] = [COL_OPEN, COL_LOW, COL_HIGH];

/// Bars needed before every indicator is defined.
pub const WARMUP: usize = 40;

/// A non-empty series of strictly positive, finite prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries(Vec<f64>);

impl PriceSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty price series".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "price at index {i} is not a finite positive number: {}",
                values[i]
            )));
        }
        Ok(PriceSeries(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    pub values: Vec<f64>,
    pub valid_from: usize,
}

impl IndicatorSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at day `t`, or `None` before the indicator is defined.
    pub fn get(&self, t: usize) -> Option<f64> {
        if t < self.valid_from {
            None
        } else {
            self.values.get(t).copied()
        }
    }

    pub fn valid(&self) -> &[f64] {
        &self.values[self.valid_from..]
    }
}

fn check_window(series: &PriceSeries, n: usize) -> Result<()> {
    if n == 0 || n > series.len() {
        return Err(Error::InvalidWindow { window: n, len: series.len() });
    }
    Ok(())
}

/// Simple moving average over `n` days, maintained as a rolling sum.
pub fn sma(series: &PriceSeries, n: usize) -> Result<IndicatorSeries> {
    check_window(series, n)?;
    let xs = series.values();
    // sums of deviations from the first price keep constant stretches exact
    let base = xs[0];
    let mut values = vec![f64::NAN; xs.len()];
    let mut sum: f64 = xs[..n].iter().map(|x| x - base).sum();
    values[n - 1] = base + sum / n as f64;
    for t in n..xs.len() {
        sum += xs[t] - xs[t - n];
        values[t] = base + sum / n as f64;
    }
    Ok(IndicatorSeries { values, valid_from: n - 1 })
}

/// Double-double number: an unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        Dd { hi: s, lo: lo - (s - hi) }
    }

    fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let (t, f) = two_sum(self.lo, other.lo);
        let r = Dd::renorm(s, e + t);
        Dd::renorm(r.hi, r.lo + f)
    }

    fn sub(self, other: Dd) -> Dd {
        self.add(Dd { hi: -other.hi, lo: -other.lo })
    }

    fn mul(self, other: Dd) -> Dd {
        let p = self.hi * other.hi;
        let e = self.hi.mul_add(other.hi, -p) + (self.hi * other.lo + self.lo * other.hi);
        Dd::renorm(p, e)
    }

    fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let p = q1 * d;
        let pe = q1.mul_add(d, -p);
        let (s, e) = two_sum(self.hi, -p);
        let q2 = (s + (e - pe + self.lo)) / d;
        Dd::renorm(q1, q2)
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// EMA state carried in double-double so that differences of averages
/// (MACD) stay accurate near zero.
fn ema_dd(xs: &[f64], n: usize) -> Vec<Dd> {
    let alpha = Dd::new(2.0).div_f64(n as f64 + 1.0);
    let base = xs[0];
    let dev = xs[..n].iter().fold(Dd::new(0.0), |acc, &x| {
        let (hi, lo) = two_sum(x, -base);
        acc.add(Dd { hi, lo })
    });
    let mut prev = Dd::new(base).add(dev.div_f64(n as f64));
    let mut out = vec![Dd::new(f64::NAN); xs.len()];
    out[n - 1] = prev;
    for t in n..xs.len() {
        prev = prev.add(alpha.mul(Dd::new(xs[t]).sub(prev)));
        out[t] = prev;
    }
    out
}

/// Exponential moving average with smoothing `2/(n+1)`, seeded at day `n-1`
/// with the simple average of the first `n` prices.
pub fn ema(series: &PriceSeries, n: usize) -> Result<IndicatorSeries> {
    check_window(series, n)?;
    let values = ema_dd(series.values(), n).into_iter().map(|v| v.hi).collect();
    Ok(IndicatorSeries { values, valid_from: n - 1 })
}

/// EMA(12) minus EMA(26), without a signal line.
pub fn macd(series: &PriceSeries) -> Result<IndicatorSeries> {
    if series.len() < MACD_SLOW {
        return Err(Error::InsufficientHistory { needed: MACD_SLOW, got: series.len() });
    }
    let fast = ema_dd(series.values(), MACD_FAST);
    let slow = ema_dd(series.values(), MACD_SLOW);
    let valid_from = MACD_SLOW - 1;
    let values = fast
        .iter()
        .zip(&slow)
        .enumerate()
        .map(|(t, (f, s))| if t >= valid_from { f.sub(*s).hi } else { f64::NAN })
        .collect();
    Ok(IndicatorSeries { values, valid_from })
}

/// Per-day feature rows for one ticker, columns ordered as [`FEATURE_NAMES`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<[f64; N_FEATURES]>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Builds the feature matrix, dropping leading days where any indicator is
/// still undefined.
pub fn build_feature_matrix(bars: &[OhlcvBar]) -> Result<FeatureMatrix> {
    if let Some(w) = bars.windows(2).find(|w| w[1].date <= w[0].date) {
        return Err(Error::MalformedInput(format!(
            "bars not strictly ascending by date at {} -> {}",
            w[0].date, w[1].date
        )));
    }
    if bars.len() < WARMUP {
        return Err(Error::InsufficientHistory { needed: WARMUP, got: bars.len() });
    }

    let closes = PriceSeries::new(bars.iter().map(|b| b.close).collect())?;
    let mut indicators = Vec::with_capacity(9);
    for &n in &SMA_WINDOWS {
        indicators.push(sma(&closes, n)?);
    }
    for &n in &EMA_WINDOWS {
        indicators.push(ema(&closes, n)?);
    }
    indicators.push(macd(&closes)?);
    let start = indicators.iter().map(|s| s.valid_from).max().unwrap_or(0);

    let mut matrix = FeatureMatrix::default();
    for (t, bar) in bars.iter().enumerate().skip(start) {
        let mut row = [0.0; N_FEATURES];
        row[COL_OPEN] = bar.open;
        row[COL_CLOSE] = bar.close;
        row[COL_LOW] = bar.low;
        row[COL_HIGH] = bar.high;
        row[COL_VOLUME] = bar.volume;
        for (cell, ind) in row[5..].iter_mut().zip(&indicators) {
            *cell = ind.values[t];
        }
        matrix.dates.push(bar.date);
        matrix.rows.push(row);
    }
    Ok(matrix)
}

//! Date-based splitting, per-ticker min-max normalization, sliding windows and
//! the prepared-dataset container file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::indicators::{build_feature_matrix, FeatureMatrix, FEATURE_NAMES, N_FEATURES, TARGET_COLUMNS};
use crate::ingest::OhlcvBar;
use crate::rng;

pub const DEFAULT_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            _ => Err(Error::Config(format!("unknown partition `{s}`"))),
        }
    }
}

/// Inclusive calendar range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl Default for SplitBoundaries {
    fn default() -> Self {
        SplitBoundaries {
            train: DateRange { start: ymd(2007, 1, 1), end: ymd(2018, 10, 19) },
            validation: DateRange { start: ymd(2018, 10, 22), end: ymd(2020, 3, 18) },
            test: DateRange { start: ymd(2020, 3, 19), end: ymd(2020, 12, 10) },
        }
    }
}

impl SplitBoundaries {
    /// Ranges must be non-empty and strictly ordered train < validation < test.
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.train, self.validation, self.test];
        for (r, p) in ranges.iter().zip(Partition::ALL) {
            if r.start > r.end {
                return Err(Error::InvalidSplit(format!("{p} range {}..{} is empty", r.start, r.end)));
            }
        }
        for (w, p) in ranges.windows(2).zip(["validation", "test"]) {
            if w[1].start <= w[0].end {
                return Err(Error::InvalidSplit(format!(
                    "{p} starts {} which is not after the previous partition's end {}",
                    w[1].start, w[0].end
                )));
            }
        }
        Ok(())
    }

    pub fn partition_of(&self, d: NaiveDate) -> Option<Partition> {
        if self.train.contains(d) {
            Some(Partition::Train)
        } else if self.validation.contains(d) {
            Some(Partition::Validation)
        } else if self.test.contains(d) {
            Some(Partition::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partitions {
    pub train: FeatureMatrix,
    pub validation: FeatureMatrix,
    pub test: FeatureMatrix,
}

impl Partitions {
    pub fn get(&self, p: Partition) -> &FeatureMatrix {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    fn get_mut(&mut self, p: Partition) -> &mut FeatureMatrix {
        match p {
            Partition::Train => &mut self.train,
            Partition::Validation => &mut self.validation,
            Partition::Test => &mut self.test,
        }
    }
}

/// Assigns each row to the partition whose inclusive range contains its date;
/// rows outside every range are dropped.
pub fn split_by_date(matrix: &FeatureMatrix, boundaries: &SplitBoundaries) -> Result<Partitions> {
    boundaries.validate()?;
    let mut parts = Partitions::default();
    for (date, row) in matrix.dates.iter().zip(&matrix.rows) {
        if let Some(p) = boundaries.partition_of(*date) {
            let m = parts.get_mut(p);
            m.dates.push(*date);
            m.rows.push(*row);
        }
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Per-feature min/max over the training rows.
pub fn fit_minmax(train_rows: &[[f64; N_FEATURES]]) -> Result<NormalizationParams> {
    let first = train_rows
        .first()
        .ok_or_else(|| Error::NoData("cannot fit normalization on an empty training partition".into()))?;
    let mut min = first.to_vec();
    let mut max = first.to_vec();
    for row in &train_rows[1..] {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(NormalizationParams { min, max })
}

impl NormalizationParams {
    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    pub fn is_degenerate(&self, feature: usize) -> bool {
        self.max[feature] == self.min[feature]
    }

    /// `(x - min) / (max - min)`, unclamped; degenerate features map to 0.
    pub fn apply(&self, value: f64, feature: usize) -> f64 {
        if self.is_degenerate(feature) {
            0.0
        } else {
            (value - self.min[feature]) / (self.max[feature] - self.min[feature])
        }
    }

    pub fn invert(&self, value: f64, feature: usize) -> Result<f64> {
        if feature >= self.n_features() {
            return Err(Error::InvalidInput(format!("feature index {feature} out of range")));
        }
        if self.is_degenerate(feature) {
            return Err(Error::NonInvertible(feature));
        }
        Ok(value * (self.max[feature] - self.min[feature]) + self.min[feature])
    }

    pub fn apply_row(&self, row: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
            *o = self.apply(v, j);
        }
        out
    }
}

pub fn apply_minmax(rows: &[[f64; N_FEATURES]], params: &NormalizationParams) -> Vec<[f64; N_FEATURES]> {
    rows.iter().map(|r| params.apply_row(r)).collect()
}

pub fn invert_minmax(values: &[f64], params: &NormalizationParams, feature: usize) -> Result<Vec<f64>> {
    values.iter().map(|&v| params.invert(v, feature)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub ticker: String,
    pub partition: Partition,
    /// Date of the last input row.
    pub last_input_date: NaiveDate,
    pub target_date: NaiveDate,
    /// `n_window x N_FEATURES`, row-major, oldest day first.
    pub inputs: Vec<f64>,
    /// Normalized next-day (open, low, high).
    pub targets: [f64; 3],
}

impl WindowedSample {
    pub fn n_window(&self) -> usize {
        self.inputs.len() / N_FEATURES
    }

    pub fn input_row(&self, t: usize) -> &[f64] {
        &self.inputs[t * N_FEATURES..(t + 1) * N_FEATURES]
    }

    /// Normalized (open, low, high) of the last input day.
    pub fn previous_targets(&self) -> [f64; 3] {
        let last = self.input_row(self.n_window() - 1);
        TARGET_COLUMNS.map(|c| last[c])
    }
}

/// One sample per row `t >= n_window`: inputs are rows `[t - n_window, t)`,
/// targets the open/low/high of row `t`. `matrix` must already be normalized.
pub fn make_windows(
    matrix: &FeatureMatrix,
    n_window: usize,
    ticker: &str,
    partition: Partition,
) -> Vec<WindowedSample> {
    if n_window == 0 || matrix.len() <= n_window {
        return Vec::new();
    }
    (n_window..matrix.len())
        .map(|t| WindowedSample {
            ticker: ticker.to_string(),
            partition,
            last_input_date: matrix.dates[t - 1],
            target_date: matrix.dates[t],
            inputs: matrix.rows[t - n_window..t].iter().flatten().copied().collect(),
            targets: TARGET_COLUMNS.map(|c| matrix.rows[t][c]),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickerSamples {
    pub ticker: String,
    pub params: NormalizationParams,
    pub train: Vec<WindowedSample>,
    pub validation: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
}

/// Features, split, normalization (fitted on train rows) and windows for one ticker.
pub fn prepare_ticker(
    ticker: &str,
    bars: &[OhlcvBar],
    boundaries: &SplitBoundaries,
    n_window: usize,
) -> Result<TickerSamples> {
    let matrix = build_feature_matrix(bars)?;
    let parts = split_by_date(&matrix, boundaries)?;
    let params = fit_minmax(&parts.train.rows)
        .map_err(|_| Error::NoData(format!("{ticker}: no rows inside the training range")))?;
    let window = |p: Partition| {
        let m = parts.get(p);
        let normalized = FeatureMatrix { dates: m.dates.clone(), rows: apply_minmax(&m.rows, &params) };
        make_windows(&normalized, n_window, ticker, p)
    };
    Ok(TickerSamples {
        ticker: ticker.to_string(),
        train: window(Partition::Train),
        validation: window(Partition::Validation),
        test: window(Partition::Test),
        params,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub n_window: usize,
    pub boundaries: SplitBoundaries,
    /// Ticker order used for pooling.
    pub tickers: Vec<String>,
    pub params: BTreeMap<String, NormalizationParams>,
    pub train: Vec<WindowedSample>,
    pub validation: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
}

impl SplitDataset {
    pub fn partition(&self, p: Partition) -> &[WindowedSample] {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }
}

/// Concatenates per-ticker samples in the given ticker order.
pub fn pool_indices(
    per_ticker: Vec<TickerSamples>,
    n_window: usize,
    boundaries: SplitBoundaries,
) -> SplitDataset {
    let mut ds = SplitDataset {
        n_window,
        boundaries,
        tickers: Vec::new(),
        params: BTreeMap::new(),
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for t in per_ticker {
        ds.tickers.push(t.ticker.clone());
        ds.params.insert(t.ticker, t.params);
        ds.train.extend(t.train);
        ds.validation.extend(t.validation);
        ds.test.extend(t.test);
    }
    ds
}

/// Training-sample visiting order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::derive(seed, rng::STREAM_SHUFFLE, &[epoch as u64]);
    order.shuffle(&mut rng);
    order
}

const DATASET_MAGIC: &[u8; 8] = b"ALSTMDS\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SampleMeta {
    ticker: usize,
    partition: Partition,
    last_input_date: NaiveDate,
    target_date: NaiveDate,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    n_window: usize,
    feature_names: Vec<String>,
    boundaries: SplitBoundaries,
    tickers: Vec<String>,
    params: BTreeMap<String, NormalizationParams>,
    samples: Vec<SampleMeta>,
}

impl SplitDataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let stride = self.n_window * N_FEATURES + 3;
        let all: Vec<&WindowedSample> = self.train.iter().chain(&self.validation).chain(&self.test).collect();
        let mut samples = Vec::with_capacity(all.len());
        let mut payload = Vec::with_capacity(all.len() * stride);
        for s in all {
            let ticker = self
                .tickers
                .iter()
                .position(|t| *t == s.ticker)
                .ok_or_else(|| Error::UnknownTicker(s.ticker.clone()))?;
            samples.push(SampleMeta {
                ticker,
                partition: s.partition,
                last_input_date: s.last_input_date,
                target_date: s.target_date,
            });
            payload.extend_from_slice(&s.inputs);
            payload.extend_from_slice(&s.targets);
        }
        let manifest = DatasetManifest {
            format: "assoc-lstm-dataset".into(),
            n_window: self.n_window,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            boundaries: self.boundaries,
            tickers: self.tickers.clone(),
            params: self.params.clone(),
            samples,
        };
        let json = serde_json::to_vec(&manifest)?;
        Ok(container::encode(DATASET_MAGIC, DATASET_VERSION, &json, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, payload) = container::decode(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let m: DatasetManifest = serde_json::from_slice(json)?;
        if m.feature_names.len() != N_FEATURES || m.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b) {
            return Err(Error::IncompatibleFormat(format!("unexpected feature set {:?}", m.feature_names)));
        }
        let stride = m.n_window * N_FEATURES + 3;
        if payload.len() != stride * m.samples.len() {
            return Err(Error::Corrupt(format!(
                "payload has {} values, expected {}",
                payload.len(),
                stride * m.samples.len()
            )));
        }
        let mut ds = SplitDataset {
            n_window: m.n_window,
            boundaries: m.boundaries,
            tickers: m.tickers,
            params: m.params,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for (meta, chunk) in m.samples.iter().zip(payload.chunks_exact(stride)) {
            let ticker = ds
                .tickers
                .get(meta.ticker)
                .ok_or_else(|| Error::Corrupt(format!("ticker index {} out of range", meta.ticker)))?
                .clone();
            let n_in = m.n_window * N_FEATURES;
            let sample = WindowedSample {
                ticker,
                partition: meta.partition,
                last_input_date: meta.last_input_date,
                target_date: meta.target_date,
                inputs: chunk[..n_in].to_vec(),
                targets: [chunk[n_in], chunk[n_in + 1], chunk[n_in + 2]],
            };
            match meta.partition {
                Partition::Train => ds.train.push(sample),
                Partition::Validation => ds.validation.push(sample),
                Partition::Test => ds.test.push(sample),
            }
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::ingest::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_with_dates(dates: &[NaiveDate]) -> FeatureMatrix {
        FeatureMatrix {
            dates: dates.to_vec(),
            rows: dates.iter().enumerate().map(|(i, _)| [i as f64; N_FEATURES]).collect(),
        }
    }

    #[test]
    fn split_uses_inclusive_default_boundaries() {
        let b = SplitBoundaries::default();
        assert_eq!(b.partition_of(ymd(2018, 10, 19)), Some(Partition::Train));
        assert_eq!(b.partition_of(ymd(2018, 10, 22)), Some(Partition::Validation));
        assert_eq!(b.partition_of(ymd(2020, 3, 18)), Some(Partition::Validation));
        assert_eq!(b.partition_of(ymd(2020, 3, 19)), Some(Partition::Test));
        assert_eq!(b.partition_of(ymd(2020, 12, 11)), None);
        assert_eq!(b.partition_of(ymd(2006, 12, 29)), None);

        let m = matrix_with_dates(&[ymd(2006, 6, 1), ymd(2018, 10, 19), ymd(2019, 1, 2), ymd(2020, 3, 19)]);
        let p = split_by_date(&m, &b).unwrap();
        assert_eq!(p.train.dates, [ymd(2018, 10, 19)]);
        assert_eq!(p.validation.dates, [ymd(2019, 1, 2)]);
        assert_eq!(p.test.dates, [ymd(2020, 3, 19)]);
    }

    #[test]
    fn split_of_empty_matrix() {
        let p = split_by_date(&FeatureMatrix::default(), &SplitBoundaries::default()).unwrap();
        assert!(p.train.is_empty() && p.validation.is_empty() && p.test.is_empty());
    }

    #[test]
    fn split_rejects_misordered_boundaries() {
        let mut b = SplitBoundaries::default();
        b.test.start = ymd(2019, 1, 1);
        assert!(matches!(split_by_date(&FeatureMatrix::default(), &b), Err(Error::InvalidSplit(_))));
        let mut b = SplitBoundaries::default();
        b.train.end = b.train.start.pred_opt().unwrap();
        assert!(matches!(b.validate(), Err(Error::InvalidSplit(_))));
    }

    #[test]
    fn fit_and_apply() {
        let mut rows = vec![[1.0; N_FEATURES]; 3];
        for (i, r) in rows.iter_mut().enumerate() {
            r[0] = 10.0 * (i + 1) as f64;
        }
        let p = fit_minmax(&rows).unwrap();
        assert_eq!((p.min[0], p.max[0]), (10.0, 30.0));
        assert_eq!(p.apply(20.0, 0), 0.5);
        assert_eq!(p.apply(40.0, 0), 1.5);
        assert!(p.is_degenerate(1));
        assert_eq!(p.apply(123.0, 1), 0.0);
        assert!(matches!(p.invert(0.3, 1), Err(Error::NonInvertible(1))));
        assert_eq!(p.invert(0.5, 0).unwrap(), 20.0);
        assert!(matches!(fit_minmax(&[]), Err(Error::NoData(_))));
    }

    #[test]
    fn window_counts_and_targets() {
        let dates: Vec<_> = (0..8).map(|i| ymd(2020, 1, 1 + i)).collect();
        let mut m = matrix_with_dates(&dates);
        for (i, r) in m.rows.iter_mut().enumerate() {
            r[0] = 100.0 + i as f64;
            r[2] = 200.0 + i as f64;
            r[3] = 300.0 + i as f64;
        }
        let w = make_windows(&m, 7, "X", Partition::Train);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].targets, [107.0, 207.0, 307.0]);
        assert_eq!(w[0].target_date, dates[7]);
        assert_eq!(w[0].last_input_date, dates[6]);
        assert_eq!(w[0].input_row(0)[0], 100.0);
        assert_eq!(w[0].previous_targets(), [106.0, 206.0, 306.0]);

        let short = FeatureMatrix { dates: dates[..7].to_vec(), rows: m.rows[..7].to_vec() };
        assert!(make_windows(&short, 7, "X", Partition::Train).is_empty());
    }

    #[test]
    fn shuffle_is_seeded() {
        assert_eq!(epoch_order(50, 9, 3), epoch_order(50, 9, 3));
        assert_ne!(epoch_order(50, 9, 3), epoch_order(50, 9, 4));
        let mut o = epoch_order(50, 1, 0);
        o.sort();
        assert_eq!(o, (0..50).collect::<Vec<_>>());
    }
}

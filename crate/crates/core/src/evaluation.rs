//! Error metrics, trend accuracy, per-ticker reports and prediction export.
//!
//! MSE is reported on normalized values (the training scale). MAE and MAPE
//! are reported on denormalized prices. Each report field name carries its
//! scale, and [`MetricScales`] spells it out in the JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::{Partition, SplitDataset, WindowedSample};
use crate::error::{Error, Result};
use crate::ingest::write_atomic;
use crate::model::{denormalize_targets, predict_batch, AssociatedNetwork};

fn check_pair(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::Dimension(format!("{} predictions for {} actual values", pred.len(), actual.len())));
    }
    if pred.is_empty() {
        return Err(Error::NoData("metric over an empty series".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    if let Some(i) = actual.iter().position(|a| *a == 0.0) {
        return Err(Error::UndefinedMetric(format!("MAPE undefined: actual value {i} is zero")));
    }
    Ok(100.0 * pred.iter().zip(actual).map(|(p, a)| ((p - a) / a).abs()).sum::<f64>() / pred.len() as f64)
}

/// Direction of change relative to the previous day; no change counts as up.
fn rises(value: f64, previous: f64) -> bool {
    value - previous >= 0.0
}

/// Percentage of days where the predicted direction relative to the previous
/// actual value matches the realized direction.
pub fn trend_accuracy(pred: &[f64], actual: &[f64], previous_actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    check_pair(previous_actual, actual)?;
    let correct = pred
        .iter()
        .zip(actual)
        .zip(previous_actual)
        .filter(|((p, a), prev)| rises(**p, **prev) == rises(**a, **prev))
        .count();
    Ok(100.0 * correct as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerPrice {
    /// Pooled over the three price types.
    pub overall: f64,
    pub open: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendAccuracy {
    pub open: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerMetrics {
    pub samples: usize,
    pub mse_normalized: f64,
    pub mae_price: PerPrice,
    pub mape_percent: PerPrice,
    pub trend_accuracy_percent: TrendAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScales {
    pub mse: String,
    pub mae: String,
    pub mape: String,
    pub trend_accuracy: String,
}

impl Default for MetricScales {
    fn default() -> Self {
        MetricScales {
            mse: "normalized".into(),
            mae: "price".into(),
            mape: "percent of price".into(),
            trend_accuracy: "percent of days".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub partition: Partition,
    pub samples: usize,
    pub pooled_mse_normalized: f64,
    pub scales: MetricScales,
    pub tickers: BTreeMap<String, TickerMetrics>,
}

/// One sample's normalized/denormalized predictions next to the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub target_date: NaiveDate,
    pub pred_norm: [f64; 3],
    pub actual_norm: [f64; 3],
    pub pred: [f64; 3],
    pub actual: [f64; 3],
    pub previous: [f64; 3],
}

fn prediction_rows(network: &AssociatedNetwork, dataset: &SplitDataset, samples: &[WindowedSample]) -> Result<Vec<PredictionRow>> {
    let preds = predict_batch(samples, network, &dataset.params)?;
    samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let params = &dataset.params[&s.ticker];
            Ok(PredictionRow {
                target_date: s.target_date,
                pred_norm: p.normalized,
                actual_norm: s.targets,
                pred: p.prices.expect("predict_batch denormalizes"),
                actual: denormalize_targets(&s.targets, params)?,
                previous: denormalize_targets(&s.previous_targets(), params)?,
            })
        })
        .collect()
}

fn ticker_metrics(rows: &[PredictionRow]) -> Result<TickerMetrics> {
    let col = |f: &dyn Fn(&PredictionRow) -> [f64; 3], k: usize| -> Vec<f64> { rows.iter().map(|r| f(r)[k]).collect() };
    let flat = |f: &dyn Fn(&PredictionRow) -> [f64; 3]| -> Vec<f64> { rows.iter().flat_map(f).collect() };
    let per_price = |metric: fn(&[f64], &[f64]) -> Result<f64>| -> Result<PerPrice> {
        Ok(PerPrice {
            overall: metric(&flat(&|r| r.pred), &flat(&|r| r.actual))?,
            open: metric(&col(&|r| r.pred, 0), &col(&|r| r.actual, 0))?,
            low: metric(&col(&|r| r.pred, 1), &col(&|r| r.actual, 1))?,
            high: metric(&col(&|r| r.pred, 2), &col(&|r| r.actual, 2))?,
        })
    };
    let trend = |k: usize| trend_accuracy(&col(&|r| r.pred, k), &col(&|r| r.actual, k), &col(&|r| r.previous, k));
    Ok(TickerMetrics {
        samples: rows.len(),
        mse_normalized: mse(&flat(&|r| r.pred_norm), &flat(&|r| r.actual_norm))?,
        mae_price: per_price(mae)?,
        mape_percent: per_price(mape)?,
        trend_accuracy_percent: TrendAccuracy { open: trend(0)?, low: trend(1)?, high: trend(2)? },
    })
}

/// Inference-mode metrics for every ticker present in `partition`.
pub fn evaluate(network: &AssociatedNetwork, dataset: &SplitDataset, partition: Partition) -> Result<EvaluationReport> {
    let samples = dataset.partition(partition);
    if samples.is_empty() {
        return Err(Error::NoData(format!("{partition} partition is empty")));
    }
    if dataset.n_window != network.config.n_window {
        return Err(Error::Config(format!(
            "checkpoint window {} does not match dataset window {}",
            network.config.n_window, dataset.n_window
        )));
    }
    let rows = prediction_rows(network, dataset, samples)?;
    let mut by_ticker: BTreeMap<String, Vec<PredictionRow>> = BTreeMap::new();
    for (s, r) in samples.iter().zip(&rows) {
        by_ticker.entry(s.ticker.clone()).or_default().push(r.clone());
    }
    let pred: Vec<f64> = rows.iter().flat_map(|r| r.pred_norm).collect();
    let actual: Vec<f64> = rows.iter().flat_map(|r| r.actual_norm).collect();
    Ok(EvaluationReport {
        partition,
        samples: samples.len(),
        pooled_mse_normalized: mse(&pred, &actual)?,
        scales: MetricScales::default(),
        tickers: by_ticker
            .into_iter()
            .map(|(t, rows)| Ok((t, ticker_metrics(&rows)?)))
            .collect::<Result<_>>()?,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Aligned text tables: pooled MSE per partition, then MAPE and trend
/// accuracy per ticker for each report.
pub fn render_tables(reports: &[EvaluationReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>8} {:>14}", "partition", "samples", "MSE (norm.)");
    for r in reports {
        let _ = writeln!(s, "{:<12} {:>8} {:>14.4e}", r.partition.as_str(), r.samples, r.pooled_mse_normalized);
    }
    for r in reports {
        let _ = writeln!(s, "\n[{}] MAPE (%)", r.partition);
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8} {:>8}", "ticker", "overall", "open", "low", "high");
        for (t, m) in &r.tickers {
            let p = &m.mape_percent;
            let _ = writeln!(s, "{:<12} {:>8.2} {:>8.2} {:>8.2} {:>8.2}", t, p.overall, p.open, p.low, p.high);
        }
        let _ = writeln!(s, "\n[{}] trend accuracy (%)", r.partition);
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8}", "ticker", "open", "low", "high");
        for (t, m) in &r.tickers {
            let a = &m.trend_accuracy_percent;
            let _ = writeln!(s, "{:<12} {:>8.1} {:>8.1} {:>8.1}", t, a.open, a.low, a.high);
        }
    }
    s
}

pub const PLOT_HEADER: &str = "date,actual_open,pred_open,actual_low,pred_low,actual_high,pred_high";

/// Date-ascending CSV of denormalized actual vs predicted prices for one ticker.
pub fn prediction_series_csv(network: &AssociatedNetwork, dataset: &SplitDataset, partition: Partition, ticker: &str) -> Result<String> {
    if !dataset.params.contains_key(ticker) {
        return Err(Error::UnknownTicker(ticker.to_string()));
    }
    let samples: Vec<WindowedSample> = dataset.partition(partition).iter().filter(|s| s.ticker == ticker).cloned().collect();
    let mut rows = prediction_rows(network, dataset, &samples)?;
    rows.sort_by_key(|r| r.target_date);
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.target_date, r.actual[0], r.pred[0], r.actual[1], r.pred[1], r.actual[2], r.pred[2]
        );
    }
    Ok(out)
}

pub fn export_prediction_series(
    network: &AssociatedNetwork,
    dataset: &SplitDataset,
    partition: Partition,
    ticker: &str,
    path: &Path,
) -> Result<usize> {
    let csv = prediction_series_csv(network, dataset, partition, ticker)?;
    write_atomic(path, csv.as_bytes())?;
    Ok(csv.lines().count() - 1)
}

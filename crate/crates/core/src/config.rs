//! Run configuration: a flat TOML file whose keys are also CLI flags.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::{DateRange, SplitBoundaries};
use crate::error::{Error, Result};
use crate::ingest::{EndpointStyle, DEFAULT_YAHOO_ENDPOINT, REFERENCE_TICKERS};
use crate::model::ArchConfig;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tickers: Vec<String>,
    pub data_dir: PathBuf,
    pub endpoint: String,
    pub endpoint_style: EndpointStyle,
    #[serde(deserialize_with = "toml_date")]
    pub fetch_from: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub fetch_to: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub train_start: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub train_end: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub val_start: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub val_end: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub test_start: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub test_end: NaiveDate,
    pub n_window: usize,
    pub open_lstm_units: Vec<usize>,
    pub branch_lstm_units: usize,
    pub dense_units: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub workers: usize,
    pub dataset: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = SplitBoundaries::default();
        let t = TrainingConfig::default();
        RunConfig {
            tickers: REFERENCE_TICKERS.iter().map(|(n, _)| n.to_string()).collect(),
            data_dir: "data".into(),
            endpoint: DEFAULT_YAHOO_ENDPOINT.into(),
            endpoint_style: EndpointStyle::Yahoo,
            fetch_from: b.train.start,
            fetch_to: b.test.end,
            train_start: b.train.start,
            train_end: b.train.end,
            val_start: b.validation.start,
            val_end: b.validation.end,
            test_start: b.test.start,
            test_end: b.test.end,
            n_window: t.arch.n_window,
            open_lstm_units: t.arch.open_lstm_units.clone(),
            branch_lstm_units: t.arch.branch_lstm_units,
            dense_units: t.arch.dense_units,
            dropout: t.arch.dropout,
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            workers: t.workers,
            dataset: "prepared/dataset.bin".into(),
            checkpoint_dir: "runs/default".into(),
        }
    }
}

/// Accepts both bare TOML dates (`2018-10-19`) and quoted strings.
fn toml_date<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<NaiveDate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Toml(toml::value::Datetime),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(t) => t,
        Raw::Toml(dt) => dt.to_string(),
    };
    NaiveDate::parse_from_str(&text, "%Y-%m-%d").map_err(serde::de::Error::custom)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn boundaries(&self) -> SplitBoundaries {
        SplitBoundaries {
            train: DateRange { start: self.train_start, end: self.train_end },
            validation: DateRange { start: self.val_start, end: self.val_end },
            test: DateRange { start: self.test_start, end: self.test_end },
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            workers: self.workers,
            arch: ArchConfig {
                n_features: crate::indicators::N_FEATURES,
                n_window: self.n_window,
                open_lstm_units: self.open_lstm_units.clone(),
                branch_lstm_units: self.branch_lstm_units,
                dense_units: self.dense_units,
                dropout: self.dropout,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.boundaries().validate()?;
        self.training().validate()?;
        if self.tickers.is_empty() {
            return Err(Error::Config("no tickers configured".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.lr, 6e-4);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.n_window, 7);
        assert_eq!(c.tickers.len(), 11);
        assert_eq!(c.boundaries(), SplitBoundaries::default());
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let c = RunConfig::from_toml("epochs = 3\ntickers = [\"FTSE\"]\ntrain_end = 2018-10-19\nval_end = \"2020-03-18\"\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.tickers, ["FTSE"]);
        assert_eq!(c.lr, 6e-4);
        assert!(matches!(RunConfig::from_toml("learning_rate = 0.1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn misordered_split_is_rejected() {
        let c = RunConfig::from_toml("test_start = 2019-01-01\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::InvalidSplit(_))));
    }
}

//! Command-line front end: `fetch`, `prepare`, `train`, `evaluate`, `predict`
//! and `export-plot`.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::{pool_indices, prepare_ticker, Partition, SplitDataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_prediction_series, render_tables, EvaluationReport};
use crate::indicators::build_feature_matrix;
use crate::ingest::{read_ohlcv_file, resolve_history_file, EndpointStyle, FetchClient, FetchSource};
use crate::model::denormalize_targets;
use crate::training::{resolve_checkpoint, train, Checkpoint};

#[derive(Debug, Parser)]
#[command(name = "assoc-lstm", version, about = "Associated LSTM forecaster for daily open/low/high index prices")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// One flag per configuration key.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Comma-separated ticker names.
    #[arg(long, global = true, value_delimiter = ',')]
    pub tickers: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// `query` or `yahoo`.
    #[arg(long, global = true, value_parser = parse_style)]
    pub endpoint_style: Option<EndpointStyle>,
    #[arg(long, global = true)]
    pub fetch_from: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub fetch_to: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub train_start: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub train_end: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub val_start: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub val_end: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub test_start: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub test_end: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub n_window: Option<usize>,
    /// Comma-separated units of the stacked open-branch LSTM layers.
    #[arg(long, global = true, value_delimiter = ',')]
    pub open_lstm_units: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub branch_lstm_units: Option<usize>,
    #[arg(long, global = true)]
    pub dense_units: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub checkpoint_every: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Prepared dataset file.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Directory receiving checkpoints and history.
    #[arg(long, global = true)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn parse_style(s: &str) -> std::result::Result<EndpointStyle, String> {
    match s {
        "query" => Ok(EndpointStyle::Query),
        "yahoo" => Ok(EndpointStyle::Yahoo),
        other => Err(format!("unknown endpoint style `{other}` (expected query or yahoo)")),
    }
}

macro_rules! override_fields {
    ($cfg:ident, $o:ident, $($f:ident),* $(,)?) => {
        $(if let Some(v) = &$o.$f { $cfg.$f = v.clone(); })*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        override_fields!(
            cfg, self, tickers, data_dir, endpoint, endpoint_style, fetch_from, fetch_to, train_start,
            train_end, val_start, val_end, test_start, test_end, n_window, open_lstm_units,
            branch_lstm_units, dense_units, dropout, lr, epochs, batch_size, seed, checkpoint_every,
            workers, dataset, checkpoint_dir,
        );
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download daily history for every configured ticker into the data directory.
    Fetch {
        /// Serve from the on-disk cache only.
        #[arg(long)]
        offline: bool,
    },
    /// Build features, split, normalize and window; write the dataset file.
    Prepare,
    /// Train on a prepared dataset, checkpointing into the checkpoint directory.
    Train,
    /// Report metrics for a checkpoint file, or the best one in a directory.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train, validation, test or all.
        #[arg(long, default_value = "test")]
        partition: String,
        /// JSON report path; defaults to `<checkpoint dir>/report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict the next day's open/low/high from the tail of a history CSV.
    Predict {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        ticker: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write actual vs predicted prices of one ticker as CSV.
    ExportPlot {
        #[arg(long)]
        ticker: String,
        #[arg(long, default_value = "test")]
        partition: Partition,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output CSV; defaults to `<checkpoint dir>/<ticker>_<partition>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the pooled dataset from `<data_dir>` history files.
pub fn prepare_from_dir(cfg: &RunConfig) -> Result<SplitDataset> {
    let boundaries = cfg.boundaries();
    boundaries.validate()?;
    let mut per_ticker = Vec::with_capacity(cfg.tickers.len());
    for ticker in &cfg.tickers {
        let path = resolve_history_file(&cfg.data_dir, ticker)?;
        let parsed = read_ohlcv_file(ticker, &path)?;
        if parsed.skipped > 0 {
            eprintln!("{ticker}: skipped {} malformed or duplicate rows", parsed.skipped);
        }
        per_ticker.push(prepare_ticker(ticker, &parsed.history.bars, &boundaries, cfg.n_window)?);
    }
    Ok(pool_indices(per_ticker, cfg.n_window, boundaries))
}

fn checkpoint_for(cfg: &RunConfig, path: Option<&Path>) -> Result<Checkpoint> {
    resolve_checkpoint(path.unwrap_or(&cfg.checkpoint_dir))
}

fn parse_partitions(s: &str) -> Result<Vec<Partition>> {
    if s == "all" {
        return Ok(vec![Partition::Train, Partition::Validation, Partition::Test]);
    }
    s.parse::<Partition>().map(|p| vec![p])
}

fn report_dir(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    match checkpoint {
        Some(p) if p.is_file() => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        Some(p) => p.to_path_buf(),
        None => cfg.checkpoint_dir.clone(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Fetch { offline } => cmd_fetch(&cfg, offline),
        Command::Prepare => {
            let ds = prepare_from_dir(&cfg)?;
            ds.save(&cfg.dataset)?;
            println!(
                "wrote {} ({} tickers; train {}, validation {}, test {} samples)",
                cfg.dataset.display(),
                ds.tickers.len(),
                ds.train.len(),
                ds.validation.len(),
                ds.test.len()
            );
            Ok(())
        }
        Command::Train => {
            let ds = SplitDataset::load(&cfg.dataset)?;
            let outcome = train(&ds, &cfg.training(), &cfg.checkpoint_dir)?;
            if let Some(last) = outcome.history.epochs.last() {
                println!(
                    "trained {} epochs ({} steps); final train MSE {:.6e}, validation MSE {:.6e}",
                    outcome.history.epochs.len(),
                    outcome.steps,
                    last.train_mse,
                    last.val_mse
                );
            }
            Ok(())
        }
        Command::Evaluate { checkpoint, partition, report } => {
            let partitions = parse_partitions(&partition)?;
            let ds = SplitDataset::load(&cfg.dataset)?;
            let ck = checkpoint_for(&cfg, checkpoint.as_deref())?;
            let reports = partitions
                .into_iter()
                .map(|p| evaluate(&ck.network, &ds, p))
                .collect::<Result<Vec<EvaluationReport>>>()?;
            let path = report.unwrap_or_else(|| report_dir(&cfg, checkpoint.as_deref()).join("report.json"));
            let mut json = serde_json::to_string_pretty(&reports)?;
            json.push('\n');
            crate::ingest::write_atomic(&path, json.as_bytes())?;
            println!("checkpoint epoch {} (validation MSE {:.6e})", ck.epoch, ck.val_mse);
            print!("{}", render_tables(&reports));
            println!("\nreport written to {}", path.display());
            Ok(())
        }
        Command::Predict { csv, ticker, checkpoint } => cmd_predict(&cfg, &csv, &ticker, checkpoint.as_deref()),
        Command::ExportPlot { ticker, partition, checkpoint, out } => {
            let ds = SplitDataset::load(&cfg.dataset)?;
            let ck = checkpoint_for(&cfg, checkpoint.as_deref())?;
            let path = out.unwrap_or_else(|| {
                report_dir(&cfg, checkpoint.as_deref()).join(format!(
                    "{}_{}.csv",
                    crate::ingest::sanitize_ticker(&ticker),
                    partition
                ))
            });
            let rows = export_prediction_series(&ck.network, &ds, partition, &ticker, &path)?;
            println!("wrote {rows} rows to {}", path.display());
            Ok(())
        }
    }
}

fn cmd_fetch(cfg: &RunConfig, offline: bool) -> Result<()> {
    let mut client = FetchClient::new(cfg.endpoint.clone(), cfg.data_dir.clone());
    client.style = cfg.endpoint_style;
    client.offline = offline;
    let mut failed = Vec::new();
    for ticker in &cfg.tickers {
        match client.fetch_history(ticker, cfg.fetch_from, cfg.fetch_to) {
            Ok((history, source)) => {
                let how = match source {
                    FetchSource::Cache => "cached",
                    FetchSource::Network => "downloaded",
                };
                println!("{ticker}: {} bars ({how})", history.bars.len());
            }
            Err(e) => {
                eprintln!("{ticker}: {e}");
                failed.push(ticker.clone());
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Transport(format!("fetch failed for {}", failed.join(", "))))
    }
}

fn cmd_predict(cfg: &RunConfig, csv: &Path, ticker: &str, checkpoint: Option<&Path>) -> Result<()> {
    let ck = checkpoint_for(cfg, checkpoint)?;
    let params = ck.normalization.get(ticker).ok_or_else(|| Error::MissingParams(ticker.to_string()))?;
    let parsed = read_ohlcv_file(ticker, csv)?;
    let matrix = build_feature_matrix(&parsed.history.bars)?;
    let n_window = ck.config.arch.n_window;
    if matrix.rows.len() < n_window {
        return Err(Error::InsufficientHistory { needed: n_window, got: matrix.rows.len() });
    }
    let tail = &matrix.rows[matrix.rows.len() - n_window..];
    let inputs: Vec<f64> = tail.iter().flat_map(|r| params.apply_row(r)).collect();
    let normalized = ck.network.predict(&inputs)?;
    let prices = denormalize_targets(&normalized, params)?;
    let last = matrix.dates.last().expect("non-empty matrix");
    let out = serde_json::json!({
        "ticker": ticker,
        "last_input_date": last.to_string(),
        "open": prices[0],
        "low": prices[1],
        "high": prices[2],
    });
    println!("{out}");
    Ok(())
}

//! Next-day open/low/high forecasting for market indices with three chained
//! LSTM branches.
//!
//! Pipeline: [`ingest`] OHLCV CSV → [`indicators`] feature matrix →
//! [`dataset`] split, normalize, window → [`training`] ADAM over the
//! [`model::AssociatedNetwork`] → [`evaluation`] metrics and plot series.

pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod indicators;
pub mod ingest;
pub mod lstm;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};

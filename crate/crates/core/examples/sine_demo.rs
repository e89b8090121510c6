//! Trains the default network on a noiseless sinusoid and prints the loss
//! curve. Usage: `cargo run --release --example sine_demo [EPOCHS]`

use assoc_lstm::dataset::{pool_indices, prepare_ticker};
use assoc_lstm::synthetic::{fractional_boundaries, sinusoid_bars};
use assoc_lstm::training::{train, TrainingConfig};
use chrono::NaiveDate;

fn main() -> assoc_lstm::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let bars = sinusoid_bars(600, NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(), 50.0, 100.0, 20.0);
    let dates: Vec<_> = bars.iter().map(|b| b.date).collect();
    let bounds = fractional_boundaries(&dates, 0.85, 0.10);
    let ds = pool_indices(vec![prepare_ticker("SINE", &bars, &bounds, 7)?], 7, bounds);
    println!("samples: train {}, validation {}, test {}", ds.train.len(), ds.validation.len(), ds.test.len());

    let cfg = TrainingConfig { epochs, checkpoint_every: epochs, ..Default::default() };
    let dir = tempfile::tempdir()?;
    let out = train(&ds, &cfg, dir.path())?;
    println!("epoch  train_mse  val_mse");
    for r in &out.history.epochs {
        println!("{:>5}  {:.3e}  {:.3e}", r.epoch, r.train_mse, r.val_mse);
    }
    Ok(())
}

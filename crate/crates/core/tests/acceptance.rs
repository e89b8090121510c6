//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 8 and 9 need cached real index histories. Point
//! `ASSOC_LSTM_REPRO_DATA` at a directory holding one `<TICKER>.csv` per
//! reference index to run them; their outcome is logged, never asserted.

use std::path::Path;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use assoc_lstm::dataset::{fit_minmax, prepare_ticker, pool_indices, Partition, SplitBoundaries, SplitDataset};
use assoc_lstm::evaluation::{evaluate, mae, mape, mse, trend_accuracy};
use assoc_lstm::indicators::{ema, macd, sma, PriceSeries, N_FEATURES};
use assoc_lstm::ingest::{read_ohlcv_file, resolve_history_file, REFERENCE_TICKERS};
use assoc_lstm::lstm::{gradient_check, DropoutMask, LstmLayer, LstmState};
use assoc_lstm::model::{loss, loss_gradient, ArchConfig, AssociatedNetwork, Mode};
use assoc_lstm::rng::derive;
use assoc_lstm::synthetic::{fractional_boundaries, sinusoid_bars};
use assoc_lstm::training::{list_checkpoints, select_best, train, TrainingConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let config = ArchConfig {
        n_features: N_FEATURES,
        n_window: 7,
        open_lstm_units: vec![4, 4],
        branch_lstm_units: 4,
        dense_units: 4,
        dropout: 0.2,
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (seed, mode) in [(1, Mode::Inference), (2, Mode::Train)] {
        let net = AssociatedNetwork::init(config.clone(), seed).map_err(|e| e.to_string())?;
        let mut r = derive(seed, 900, &[]);
        let x: Vec<f64> = (0..7 * N_FEATURES).map(|_| r.random_range(0.0..1.0)).collect();
        let y = [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
        let masks = net.sample_masks(mode, seed + 10).map_err(|e| e.to_string())?;
        let (pred, cache) = net.forward_with_masks(&x, &masks).map_err(|e| e.to_string())?;
        let g = net.backward(&cache, loss_gradient(&pred, &y)).map_err(|e| e.to_string())?;
        let f = |m: &AssociatedNetwork| loss(&m.forward_with_masks(&x, &masks).expect("forward").0, &y);
        let report = gradient_check(&net, &g, f, 1e-5);
        if !report.passed(1e-4) {
            return Err(format!("{report:?}"));
        }
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        secs < 30.0,
        format!("{checked} parameters, max relative error {worst:.2e}, {secs:.2}s"),
        format!("took {secs:.1}s (limit 30s)"),
    )
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate-by-gate scalar evaluation of one LSTM step.
fn scalar_cell(l: &LstmLayer, x: &[f64], h: &[f64], c: &[f64], mask: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = l.input_dim;
    let pre = |w: &assoc_lstm::lstm::Matrix, b: &[f64], k: usize| {
        let mut s = b[k];
        for (j, xj) in x.iter().enumerate() {
            s += w.get(k, j) * xj;
        }
        for (j, hj) in h.iter().enumerate() {
            s += w.get(k, n + j) * hj;
        }
        s
    };
    let mut h_new = vec![0.0; l.units];
    let mut c_new = vec![0.0; l.units];
    for k in 0..l.units {
        let f = sig(pre(&l.w_f, &l.b_f, k));
        let i = sig(pre(&l.w_i, &l.b_i, k));
        let o = sig(pre(&l.w_o, &l.b_o, k));
        let cand = pre(&l.w_c, &l.b_c, k).tanh();
        c_new[k] = f * c[k] + i * mask[k] * cand;
        h_new[k] = o * c_new[k].tanh();
    }
    (h_new, c_new)
}

fn lstm_equation_fidelity() -> Outcome {
    let mut worst = 0.0f64;
    for draw in 0..100u64 {
        let mut r = derive(draw, 901, &[]);
        let n = r.random_range(1..=4);
        let u = r.random_range(1..=4);
        let mut layer = LstmLayer::zeros(n, u);
        for w in [&mut layer.w_f, &mut layer.w_i, &mut layer.w_o, &mut layer.w_c] {
            w.data.iter_mut().for_each(|v| *v = r.random_range(-2.0..2.0));
        }
        for b in [&mut layer.b_f, &mut layer.b_i, &mut layer.b_o, &mut layer.b_c] {
            b.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        }
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let prev = LstmState {
            h: (0..u).map(|_| r.random_range(-1.0..1.0)).collect(),
            c: (0..u).map(|_| r.random_range(-2.0..2.0)).collect(),
        };
        let mask = if draw % 2 == 0 {
            DropoutMask::identity(u)
        } else {
            DropoutMask::sample(u, 0.3, &mut r).map_err(|e| e.to_string())?
        };
        let (state, _) = layer.cell_forward(&x, &prev, &mask).map_err(|e| e.to_string())?;
        let (h, c) = scalar_cell(&layer, &x, &prev.h, &prev.c, mask.values());
        for k in 0..u {
            worst = worst.max((state.h[k] - h[k]).abs()).max((state.c[k] - c[k]).abs());
        }
    }
    check(worst <= 1e-12, format!("100 draws, max deviation {worst:.2e}"), format!("max deviation {worst:.2e}"))
}

fn random_walk(seed: u64, n: usize) -> Vec<f64> {
    let mut r = derive(seed, 902, &[]);
    let mut x = 100.0;
    (0..n)
        .map(|_| {
            x += r.random_range(-1.0..1.0);
            x
        })
        .collect()
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// SMA, EMA and MACD evaluated from their definitions in exact rational
/// arithmetic, rounded once at the end.
struct ExactIndicators {
    xs: Vec<BigRational>,
}

impl ExactIndicators {
    fn sma(&self, n: usize, t: usize) -> f64 {
        let sum: BigRational = self.xs[t + 1 - n..=t].iter().sum();
        (sum / BigRational::from_integer(n.into())).to_f64().unwrap()
    }

    fn ema(&self, n: usize) -> Vec<BigRational> {
        let alpha = BigRational::new(2.into(), (n + 1).into());
        let one = BigRational::one();
        let mut prev: BigRational = self.xs[..n].iter().sum::<BigRational>() / BigRational::from_integer(n.into());
        let mut out = vec![BigRational::zero(); n - 1];
        out.push(prev.clone());
        for x in &self.xs[n..] {
            prev = &alpha * x + (&one - &alpha) * &prev;
            out.push(prev.clone());
        }
        out
    }
}

fn indicator_oracles() -> Outcome {
    let mut worst = [0.0f64; 3];
    for seed in 0..5 {
        let xs = random_walk(seed, 1000);
        let oracle = ExactIndicators { xs: xs.iter().map(|&x| exact(x)).collect() };
        let series = PriceSeries::new(xs.clone()).map_err(|e| e.to_string())?;
        for n in [5, 10, 20, 40] {
            let s = sma(&series, n).map_err(|e| e.to_string())?;
            let e = ema(&series, n).map_err(|e| e.to_string())?;
            let exact_ema = oracle.ema(n);
            for (t, exact) in exact_ema.iter().enumerate().skip(n - 1) {
                worst[0] = worst[0].max(rel(s.get(t).unwrap(), oracle.sma(n, t)));
                worst[1] = worst[1].max(rel(e.get(t).unwrap(), exact.to_f64().unwrap()));
            }
        }
        let m = macd(&series).map_err(|e| e.to_string())?;
        let (fast, slow) = (oracle.ema(12), oracle.ema(26));
        for t in 25..xs.len() {
            let brute = (&fast[t] - &slow[t]).to_f64().unwrap();
            worst[2] = worst[2].max(rel(m.get(t).unwrap(), brute));
        }
    }
    let mut constant_ok = true;
    for c in [0.1, 3.7, 100.0, 1234.5678, 98765.4321] {
        let m = macd(&PriceSeries::new(vec![c; 200]).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        constant_ok &= m.valid().iter().all(|v| *v == 0.0);
    }
    let summary = format!("relative error sma {:.1e}, ema {:.1e}, macd {:.1e}; constant MACD zero: {constant_ok}", worst[0], worst[1], worst[2]);
    check(worst.iter().all(|w| *w <= 1e-12) && constant_ok, summary.clone(), summary)
}

fn normalization() -> Outcome {
    let mut r = derive(3, 903, &[]);
    let rows: Vec<[f64; N_FEATURES]> = (0..300)
        .map(|_| std::array::from_fn(|j| r.random_range(0.0..1.0) * 10f64.powi(j as i32 % 7)))
        .collect();
    let params = fit_minmax(&rows).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for row in &rows {
        for (j, &v) in row.iter().enumerate() {
            let back = params.invert(params.apply(v, j), j).map_err(|e| e.to_string())?;
            worst = worst.max(rel(back, v));
        }
    }
    if worst > 1e-12 {
        return Err(format!("inverse error {worst:.2e}"));
    }

    let bars = sinusoid_bars(600, chrono::NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(), 50.0, 100.0, 20.0);
    let dates: Vec<_> = bars.iter().map(|b| b.date).collect();
    let boundaries = fractional_boundaries(&dates, 0.85, 0.10);
    let full = prepare_ticker("SINE", &bars, &boundaries, 7).map_err(|e| e.to_string())?;
    let train_only: Vec<_> = bars.iter().filter(|b| b.date <= boundaries.train.end).copied().collect();
    let refit = prepare_ticker("SINE", &train_only, &boundaries, 7).map_err(|e| e.to_string())?;
    let mut scrambled = bars.clone();
    for b in scrambled.iter_mut().filter(|b| b.date > boundaries.train.end) {
        for p in [&mut b.open, &mut b.high, &mut b.low, &mut b.close] {
            *p *= 7.0;
        }
        b.volume *= 0.01;
    }
    let perturbed = prepare_ticker("SINE", &scrambled, &boundaries, 7).map_err(|e| e.to_string())?;
    let same = full.params == refit.params && full.params == perturbed.params && full.train == refit.train && full.train == perturbed.train;
    check(
        same,
        format!("inverse error {worst:.1e}; params unchanged after deleting or rescaling held-out rows"),
        "normalization parameters depend on held-out rows".into(),
    )
}

fn sine_dataset() -> SplitDataset {
    let bars = sinusoid_bars(600, chrono::NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(), 50.0, 100.0, 20.0);
    let dates: Vec<_> = bars.iter().map(|b| b.date).collect();
    let boundaries = fractional_boundaries(&dates, 0.85, 0.10);
    let t = prepare_ticker("SINE", &bars, &boundaries, 7).expect("sine fixture prepares");
    pool_indices(vec![t], 7, boundaries)
}

fn run_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = vec![dir.join("history.csv")];
    files.extend(list_checkpoints(dir).map_err(|e| e.to_string())?);
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            std::fs::read(&p).map(|b| (name, b)).map_err(|e| e.to_string())
        })
        .collect()
}

fn determinism() -> Outcome {
    let ds = sine_dataset();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (k, workers) in [1usize, 1, 4].into_iter().enumerate() {
        let cfg = TrainingConfig { epochs: 3, workers, ..TrainingConfig::default() };
        let dir = tmp.path().join(format!("run{k}"));
        train(&ds, &cfg, &dir).map_err(|e| e.to_string())?;
        runs.push(run_bytes(&dir)?);
    }
    let files = runs[0].len();
    check(
        runs[0] == runs[1] && runs[0] == runs[2] && files == 4,
        format!("{files} files bitwise identical across 3 runs (workers 1, 1, 4)"),
        "training outputs differ between runs".into(),
    )
}

fn convergence() -> Outcome {
    let ds = sine_dataset();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = train(&ds, &TrainingConfig::default(), tmp.path()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let best = outcome
        .history
        .epochs
        .iter()
        .min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
        .ok_or("no epochs recorded")?;
    let first_below = outcome.history.epochs.iter().find(|r| r.val_mse < 1e-3).map(|r| r.epoch);
    let summary = format!(
        "best validation MSE {:.3e} at epoch {}, first below 1e-3 at epoch {:?}, {secs:.1}s",
        best.val_mse, best.epoch, first_below
    );
    check(best.val_mse < 1e-3 && secs < 120.0, summary.clone(), summary)
}

fn metric_fidelity() -> Outcome {
    let m = |r: assoc_lstm::Result<f64>| r.map_err(|e| e.to_string());
    let pred = [1.0, 3.0, 5.0];
    let actual = [2.0, 2.0, 2.0];
    let cases = [
        ("mse", m(mse(&pred, &actual))?, 11.0 / 3.0),
        ("mae", m(mae(&pred, &actual))?, 5.0 / 3.0),
        ("mse identical", m(mse(&actual, &actual))?, 0.0),
        ("mape 10%", m(mape(&[110.0, 180.0], &[100.0, 200.0]))?, 10.0),
        ("mape", m(mape(&[125.0, 100.0, 175.0], &[100.0, 200.0, 100.0]))?, 50.0),
        ("mape identical", m(mape(&actual, &actual))?, 0.0),
        // up / tie-as-up / down-predicted-up
        ("trend with tie", m(trend_accuracy(&[101.0, 100.0, 102.0], &[105.0, 100.0, 95.0], &[100.0, 100.0, 100.0]))?, 200.0 / 3.0),
        ("trend all right", m(trend_accuracy(&[101.0, 99.0, 100.0], &[105.0, 95.0, 103.0], &[100.0, 100.0, 100.0]))?, 100.0),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    check(wrong.is_empty(), format!("{} fixtures exact", cases.len()), wrong.join("; "))
}

/// Logged only. Returns a description of the reproduction band outcome.
fn reproduction(data_dir: &Path) -> Result<(String, String), String> {
    let boundaries = SplitBoundaries::default();
    let mut per_ticker = Vec::new();
    for (name, _) in REFERENCE_TICKERS {
        let path = resolve_history_file(data_dir, name).map_err(|e| e.to_string())?;
        let parsed = read_ohlcv_file(name, &path).map_err(|e| e.to_string())?;
        per_ticker.push(prepare_ticker(name, &parsed.history.bars, &boundaries, 7).map_err(|e| e.to_string())?);
    }
    let ds = pool_indices(per_ticker, 7, boundaries);
    let run_dir = data_dir.join("acceptance_run");
    let cfg = TrainingConfig::default();
    if list_checkpoints(&run_dir).map(|c| c.len() < cfg.epochs).unwrap_or(true) {
        train(&ds, &cfg, &run_dir).map_err(|e| e.to_string())?;
    }
    let best = select_best(&run_dir).map_err(|e| e.to_string())?;
    let report = evaluate(&best.network, &ds, Partition::Test).map_err(|e| e.to_string())?;
    let ftse = report.tickers.get("FTSE").map(|t| t.mape_percent.overall).unwrap_or(f64::NAN);
    let band = report.pooled_mse_normalized <= 1e-2 && ftse <= 3.0;
    let c8 = format!(
        "{}: epoch {} selected, pooled test MSE {:.3e} (band 1e-2), FTSE MAPE {:.2}% (band 3%)",
        if band { "within band" } else { "OUTSIDE band" },
        best.epoch,
        report.pooled_mse_normalized,
        ftse
    );
    let (ticker, open) = report
        .tickers
        .iter()
        .map(|(t, m)| (t.clone(), m.trend_accuracy_percent.open))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_default();
    let c9 = format!(
        "{}: best open-price trend accuracy {open:.1}% ({ticker}, threshold 55%)",
        if open > 55.0 { "met" } else { "NOT met" }
    );
    Ok((c8, c9))
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 7] = [
        ("1 gradient correctness", gradient_correctness),
        ("2 LSTM equation fidelity", lstm_equation_fidelity),
        ("3 indicator oracles", indicator_oracles),
        ("4 normalization", normalization),
        ("5 determinism", determinism),
        ("6 convergence smoke test", convergence),
        ("7 metric fidelity", metric_fidelity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = Duration::as_secs_f64(&start.elapsed());
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{elapsed:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{elapsed:.1}s]");
            }
        }
    }
    match std::env::var_os("ASSOC_LSTM_REPRO_DATA") {
        Some(dir) => match reproduction(Path::new(&dir)) {
            Ok((c8, c9)) => {
                println!("LOG   8 reproduction band: {c8}");
                println!("LOG   9 trend sanity: {c9}");
            }
            Err(e) => {
                println!("LOG   8 reproduction band: could not run: {e}");
                println!("LOG   9 trend sanity: could not run: {e}");
            }
        },
        None => {
            println!("SKIP  8 reproduction band: set ASSOC_LSTM_REPRO_DATA to a directory of cached index CSVs");
            println!("SKIP  9 trend sanity: set ASSOC_LSTM_REPRO_DATA to a directory of cached index CSVs");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

//! The associated network: three LSTM branches chained through their
//! predictions. The open branch sees only the input window; the low branch
//! also sees the predicted open; the high branch sees predicted open and low.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationParams, WindowedSample};
use crate::error::{Error, Result};
use crate::indicators::{N_FEATURES, TARGET_COLUMNS};
use crate::lstm::{Activation, DenseCache, DenseLayer, DropoutMask, LayerCache, LstmLayer, Parameterized};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub n_features: usize,
    pub n_window: usize,
    /// Stacked layer sizes of the open branch.
    pub open_lstm_units: Vec<usize>,
    /// Size of the single preprocessing layer of the low and high branches.
    pub branch_lstm_units: usize,
    /// Hidden rectifier layer width in every head.
    pub dense_units: usize,
    /// Recurrent dropout rate, training only.
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            n_features: N_FEATURES,
            n_window: 7,
            open_lstm_units: vec![64, 64],
            branch_lstm_units: 64,
            dense_units: 32,
            dropout: 0.2,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_window == 0 {
            return Err(Error::Config("n_features and n_window must be positive".into()));
        }
        if self.open_lstm_units.is_empty() || self.open_lstm_units.contains(&0) {
            return Err(Error::Config("open_lstm_units needs at least one non-zero layer".into()));
        }
        if self.branch_lstm_units == 0 || self.dense_units == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// LSTM stack followed by a rectifier layer and a scalar identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub lstm: Vec<LstmLayer>,
    pub hidden: DenseLayer,
    pub out: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchCache {
    lstm: Vec<LayerCache>,
    hidden: DenseCache,
    out: DenseCache,
}

impl Branch {
    fn zeros(n_features: usize, units: &[usize], extra: usize, dense: usize) -> Self {
        let mut lstm = Vec::with_capacity(units.len());
        let mut input = n_features;
        for &u in units {
            lstm.push(LstmLayer::zeros(input, u));
            input = u;
        }
        Branch {
            lstm,
            hidden: DenseLayer::zeros(input + extra, dense, Activation::Relu),
            out: DenseLayer::zeros(dense, 1, Activation::Identity),
        }
    }

    fn init(n_features: usize, units: &[usize], extra: usize, dense: usize, rng: &mut rng::Rng) -> Self {
        let mut lstm = Vec::with_capacity(units.len());
        let mut input = n_features;
        for &u in units {
            lstm.push(LstmLayer::init(input, u, rng));
            input = u;
        }
        Branch {
            lstm,
            hidden: DenseLayer::init(input + extra, dense, Activation::Relu, rng),
            out: DenseLayer::init(dense, 1, Activation::Identity, rng),
        }
    }

    fn masks(&self, dropout: Option<(f64, &mut rng::Rng)>) -> Result<Vec<DropoutMask>> {
        match dropout {
            None => Ok(self.lstm.iter().map(|l| DropoutMask::identity(l.units)).collect()),
            Some((rate, r)) => self.lstm.iter().map(|l| DropoutMask::sample(l.units, rate, r)).collect(),
        }
    }

    fn forward(&self, inputs: &[f64], masks: &[DropoutMask], extra: &[f64]) -> Result<(f64, BranchCache)> {
        let mut seq: Vec<f64> = Vec::new();
        let mut caches = Vec::with_capacity(self.lstm.len());
        let mut last_h = Vec::new();
        for (k, (layer, mask)) in self.lstm.iter().zip(masks).enumerate() {
            let out = layer.forward(if k == 0 { inputs } else { &seq }, mask)?;
            last_h = out.final_state.h;
            seq = out.hidden;
            caches.push(out.cache);
        }
        last_h.extend_from_slice(extra);
        let (h, hidden) = self.hidden.forward(&last_h)?;
        let (y, out) = self.out.forward(&h)?;
        Ok((y[0], BranchCache { lstm: caches, hidden, out }))
    }

    /// Returns the gradient w.r.t. the `extra` inputs appended to the final
    /// hidden state.
    fn backward(&self, cache: &BranchCache, dy: f64, grads: &mut Branch) -> Result<Vec<f64>> {
        let dh = self.out.backward(&cache.out, &[dy], &mut grads.out)?;
        let d_concat = self.hidden.backward(&cache.hidden, &dh, &mut grads.hidden)?;
        let top = self.lstm.last().expect("branch has at least one layer");
        let (d_last, d_extra) = d_concat.split_at(top.units);

        let steps = cache.lstm[0].steps;
        let mut d_seq = vec![0.0; steps * top.units];
        d_seq[(steps - 1) * top.units..].copy_from_slice(d_last);
        for k in (0..self.lstm.len()).rev() {
            d_seq = self.lstm[k].backward(&cache.lstm[k], &d_seq, &mut grads.lstm[k])?;
        }
        Ok(d_extra.to_vec())
    }

    fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        for (k, l) in self.lstm.iter().enumerate() {
            for (n, t) in l.tensors() {
                out.push((format!("{prefix}.lstm{k}.{n}"), t));
            }
        }
        for (n, t) in self.hidden.tensors() {
            out.push((format!("{prefix}.hidden.{n}"), t));
        }
        for (n, t) in self.out.tensors() {
            out.push((format!("{prefix}.out.{n}"), t));
        }
    }

    fn push_tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        for (k, l) in self.lstm.iter_mut().enumerate() {
            for (n, t) in l.tensors_mut() {
                out.push((format!("{prefix}.lstm{k}.{n}"), t));
            }
        }
        for (n, t) in self.hidden.tensors_mut() {
            out.push((format!("{prefix}.hidden.{n}"), t));
        }
        for (n, t) in self.out.tensors_mut() {
            out.push((format!("{prefix}.out.{n}"), t));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fresh recurrent dropout masks per call, drawn from the seed.
    Train,
    /// Identity masks.
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCache {
    open: BranchCache,
    low: BranchCache,
    high: BranchCache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociatedNetwork {
    pub config: ArchConfig,
    pub open: Branch,
    pub low: Branch,
    pub high: Branch,
}

impl AssociatedNetwork {
    pub fn zeros(config: ArchConfig) -> Result<Self> {
        config.validate()?;
        let b = [config.branch_lstm_units];
        Ok(AssociatedNetwork {
            open: Branch::zeros(config.n_features, &config.open_lstm_units, 0, config.dense_units),
            low: Branch::zeros(config.n_features, &b, 1, config.dense_units),
            high: Branch::zeros(config.n_features, &b, 2, config.dense_units),
            config,
        })
    }

    pub fn init(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let b = [config.branch_lstm_units];
        let mut r = rng::derive(seed, rng::STREAM_INIT, &[]);
        Ok(AssociatedNetwork {
            open: Branch::init(config.n_features, &config.open_lstm_units, 0, config.dense_units, &mut r),
            low: Branch::init(config.n_features, &b, 1, config.dense_units, &mut r),
            high: Branch::init(config.n_features, &b, 2, config.dense_units, &mut r),
            config,
        })
    }

    /// Zero-valued tensor set with this network's shapes, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn check_input(&self, inputs: &[f64]) -> Result<()> {
        let want = self.config.n_window * self.config.n_features;
        if inputs.len() != want {
            return Err(Error::Config(format!(
                "input window has {} values, network expects {}x{} = {want}",
                inputs.len(),
                self.config.n_window,
                self.config.n_features
            )));
        }
        Ok(())
    }

    /// Per-branch recurrent dropout masks for one sequence.
    pub fn sample_masks(&self, mode: Mode, seed: u64) -> Result<[Vec<DropoutMask>; 3]> {
        match mode {
            Mode::Inference => Ok([self.open.masks(None)?, self.low.masks(None)?, self.high.masks(None)?]),
            Mode::Train => {
                let mut r = rng::derive(seed, rng::STREAM_DROPOUT, &[]);
                let rate = self.config.dropout;
                Ok([
                    self.open.masks(Some((rate, &mut r)))?,
                    self.low.masks(Some((rate, &mut r)))?,
                    self.high.masks(Some((rate, &mut r)))?,
                ])
            }
        }
    }

    pub fn forward_with_masks(&self, inputs: &[f64], masks: &[Vec<DropoutMask>; 3]) -> Result<([f64; 3], NetworkCache)> {
        self.check_input(inputs)?;
        let (y_open, open) = self.open.forward(inputs, &masks[0], &[])?;
        let (y_low, low) = self.low.forward(inputs, &masks[1], &[y_open])?;
        let (y_high, high) = self.high.forward(inputs, &masks[2], &[y_open, y_low])?;
        Ok(([y_open, y_low, y_high], NetworkCache { open, low, high }))
    }

    /// Normalized (open, low, high) for one input window.
    pub fn forward(&self, inputs: &[f64], mode: Mode, seed: u64) -> Result<([f64; 3], NetworkCache)> {
        let masks = self.sample_masks(mode, seed)?;
        self.forward_with_masks(inputs, &masks)
    }

    pub fn predict(&self, inputs: &[f64]) -> Result<[f64; 3]> {
        Ok(self.forward(inputs, Mode::Inference, 0)?.0)
    }

    /// Gradients of a loss whose derivative w.r.t. the three outputs is
    /// `d_out`. The high branch is processed first so the gradients it sends
    /// back into the predicted open and low are included upstream.
    pub fn backward(&self, cache: &NetworkCache, d_out: [f64; 3]) -> Result<AssociatedNetwork> {
        let mut g = self.zeros_like();
        let d_high_extra = self.high.backward(&cache.high, d_out[2], &mut g.high)?;
        let d_low = d_out[1] + d_high_extra[1];
        let d_low_extra = self.low.backward(&cache.low, d_low, &mut g.low)?;
        let d_open = d_out[0] + d_high_extra[0] + d_low_extra[0];
        self.open.backward(&cache.open, d_open, &mut g.open)?;
        Ok(g)
    }

    /// Loss and parameter gradients for one sample.
    pub fn loss_and_gradients(&self, inputs: &[f64], targets: &[f64; 3], mode: Mode, seed: u64) -> Result<(f64, AssociatedNetwork)> {
        let (pred, cache) = self.forward(inputs, mode, seed)?;
        let g = self.backward(&cache, loss_gradient(&pred, targets))?;
        Ok((loss(&pred, targets), g))
    }
}

impl Parameterized for AssociatedNetwork {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.open.push_tensors("open", &mut out);
        self.low.push_tensors("low", &mut out);
        self.high.push_tensors("high", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        self.open.push_tensors_mut("open", &mut out);
        self.low.push_tensors_mut("low", &mut out);
        self.high.push_tensors_mut("high", &mut out);
        out
    }
}

/// Mean of the three squared errors.
pub fn loss(pred: &[f64; 3], targets: &[f64; 3]) -> f64 {
    pred.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / 3.0
}

pub fn loss_gradient(pred: &[f64; 3], targets: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|k| 2.0 * (pred[k] - targets[k]) / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub ticker: String,
    pub target_date: NaiveDate,
    /// Normalized (open, low, high).
    pub normalized: [f64; 3],
    /// Denormalized (open, low, high) prices.
    pub prices: Option<[f64; 3]>,
}

impl Prediction {
    pub fn open(&self) -> f64 {
        self.normalized[0]
    }

    pub fn low(&self) -> f64 {
        self.normalized[1]
    }

    pub fn high(&self) -> f64 {
        self.normalized[2]
    }
}

/// Denormalizes a normalized (open, low, high) triple.
pub fn denormalize_targets(values: &[f64; 3], params: &NormalizationParams) -> Result<[f64; 3]> {
    Ok([
        params.invert(values[0], TARGET_COLUMNS[0])?,
        params.invert(values[1], TARGET_COLUMNS[1])?,
        params.invert(values[2], TARGET_COLUMNS[2])?,
    ])
}

/// Inference-mode predictions with prices denormalized by each sample's
/// ticker parameters.
pub fn predict_batch(
    samples: &[WindowedSample],
    network: &AssociatedNetwork,
    params: &BTreeMap<String, NormalizationParams>,
) -> Result<Vec<Prediction>> {
    samples
        .iter()
        .map(|s| {
            let p = params.get(&s.ticker).ok_or_else(|| Error::MissingParams(s.ticker.clone()))?;
            let normalized = network.predict(&s.inputs)?;
            Ok(Prediction {
                ticker: s.ticker.clone(),
                target_date: s.target_date,
                prices: Some(denormalize_targets(&normalized, p)?),
                normalized,
            })
        })
        .collect()
}

//! Epoch loop, checkpoints and best-model selection.
//!
//! Every epoch visits the training samples in a seeded order, runs
//! mini-batches of train-mode forward/backward passes, and applies one ADAM
//! step per batch with the mean of the per-sample gradients. Per-sample
//! gradients may be computed on several workers but are always summed in
//! sample order, so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::dataset::{epoch_order, NormalizationParams, Partition, SplitDataset, WindowedSample};
use crate::error::{Error, Result};
use crate::ingest::write_atomic;
use crate::lstm::{Adam, AdamHyper, Parameterized};
use crate::model::{loss, ArchConfig, AssociatedNetwork, Mode};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (the last epoch always).
    pub checkpoint_every: usize,
    /// Worker threads for per-sample gradients; 0 picks the available cores.
    /// Results do not depend on it, so checkpoints do not record it.
    #[serde(skip)]
    pub workers: usize,
    pub arch: ArchConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 6e-4,
            epochs: 100,
            batch_size: 32,
            seed: 42,
            checkpoint_every: 1,
            workers: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("epochs, batch_size and checkpoint_every must be >= 1".into()));
        }
        self.arch.validate()
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper { lr: self.lr, ..AdamHyper::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";

impl TrainingHistory {
    /// `epoch,train_mse,val_mse`. Wall-clock times go to a separate file so
    /// this one is reproducible byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:.3}\n", r.epoch, r.seconds));
        }
        s
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(HISTORY_FILE), self.to_csv().as_bytes())?;
        write_atomic(&dir.join(TIMING_FILE), self.timing_csv().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// 1-based epoch after which the state was captured.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub config: TrainingConfig,
    pub network: AssociatedNetwork,
    pub adam: Adam,
    pub tickers: Vec<String>,
    pub normalization: BTreeMap<String, NormalizationParams>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ALSTMCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    epoch: usize,
    train_mse: f64,
    val_mse: f64,
    config: TrainingConfig,
    tickers: Vec<String>,
    normalization: BTreeMap<String, NormalizationParams>,
    adam_t: u64,
    /// Payload layout: parameters in this order, then ADAM first moments,
    /// then second moments, each with the same layout.
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format: "assoc-lstm-checkpoint".into(),
            epoch: self.epoch,
            train_mse: self.train_mse,
            val_mse: self.val_mse,
            config: self.config.clone(),
            tickers: self.tickers.clone(),
            normalization: self.normalization.clone(),
            adam_t: self.adam.t,
            tensors: self
                .network
                .tensors()
                .into_iter()
                .map(|(name, t)| TensorEntry { name, len: t.len() })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.manifest())?;
        let mut payload = self.network.flatten();
        payload.extend_from_slice(&self.adam.m);
        payload.extend_from_slice(&self.adam.v);
        Ok(container::encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &json, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, payload) = container::decode(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let m: CheckpointManifest = serde_json::from_slice(json)?;
        let mut network = AssociatedNetwork::zeros(m.config.arch.clone())?;
        let n = network.n_params();
        if payload.len() != 3 * n {
            return Err(Error::Corrupt(format!("payload has {} values, expected {}", payload.len(), 3 * n)));
        }
        let mut offset = 0;
        let tensors = network.tensors_mut();
        if tensors.len() != m.tensors.len() {
            return Err(Error::Corrupt("tensor table does not match the architecture".into()));
        }
        for ((name, t), entry) in tensors.into_iter().zip(&m.tensors) {
            if name != entry.name || t.len() != entry.len {
                return Err(Error::Corrupt(format!("tensor {} does not match {name}", entry.name)));
            }
            t.copy_from_slice(&payload[offset..offset + t.len()]);
            offset += t.len();
        }
        let adam = Adam {
            hyper: m.config.adam(),
            t: m.adam_t,
            m: payload[n..2 * n].to_vec(),
            v: payload[2 * n..].to_vec(),
        };
        Ok(Checkpoint {
            epoch: m.epoch,
            train_mse: m.train_mse,
            val_mse: m.val_mse,
            config: m.config,
            network,
            adam,
            tickers: m.tickers,
            normalization: m.normalization,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Reads only the header and manifest of a checkpoint file.
fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let mut f = fs::File::open(path)?;
    let mut head = [0u8; 20];
    f.read_exact(&mut head).map_err(|_| Error::Corrupt(format!("{} is truncated", path.display())))?;
    if &head[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleFormat(format!("checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let mut json = vec![0u8; len];
    f.read_exact(&mut json).map_err(|_| Error::Corrupt(format!("{} is truncated", path.display())))?;
    Ok(serde_json::from_slice(&json)?)
}

/// Checkpoint files in `dir`, sorted by name (and therefore epoch).
pub fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::NoCheckpoint(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Checkpoint with the lowest validation MSE; ties go to the earliest epoch.
pub fn select_best(dir: &Path) -> Result<Checkpoint> {
    let mut best: Option<(usize, f64, PathBuf)> = None;
    for path in list_checkpoints(dir)? {
        let m = read_manifest(&path)?;
        let better = match &best {
            None => true,
            Some((epoch, val, _)) => m.val_mse < *val || (m.val_mse == *val && m.epoch < *epoch),
        };
        if better && m.val_mse.is_finite() {
            best = Some((m.epoch, m.val_mse, path));
        }
    }
    let (_, _, path) = best.ok_or_else(|| Error::NoCheckpoint(dir.to_path_buf()))?;
    load_checkpoint(&path)
}

/// Loads `path` directly, or the best checkpoint if it is a directory.
pub fn resolve_checkpoint(path: &Path) -> Result<Checkpoint> {
    if path.is_dir() {
        select_best(path)
    } else {
        load_checkpoint(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: TrainingHistory,
    pub out_dir: PathBuf,
    /// Optimizer steps taken in total.
    pub steps: u64,
    pub network: AssociatedNetwork,
}

/// Mean inference-mode loss over `samples`.
pub fn mean_loss(network: &AssociatedNetwork, samples: &[WindowedSample], pool: &rayon::ThreadPool) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoData("cannot compute a loss over zero samples".into()));
    }
    let losses: Vec<f64> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| network.predict(&s.inputs).map(|p| loss(&p, &s.targets)))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn check_dataset(dataset: &SplitDataset, arch: &ArchConfig) -> Result<()> {
    if dataset.train.is_empty() {
        return Err(Error::NoData("training partition is empty".into()));
    }
    if dataset.validation.is_empty() {
        return Err(Error::NoData("validation partition is empty".into()));
    }
    if let Some(s) = dataset.train.iter().find(|s| s.partition != Partition::Train) {
        return Err(Error::InvalidInput(format!(
            "{} sample for {} on {} found in the training set",
            s.partition, s.ticker, s.target_date
        )));
    }
    if dataset.n_window != arch.n_window {
        return Err(Error::Config(format!(
            "dataset window {} does not match architecture window {}",
            dataset.n_window, arch.n_window
        )));
    }
    let want = arch.n_window * arch.n_features;
    if let Some(s) = dataset.train.iter().chain(&dataset.validation).find(|s| s.inputs.len() != want) {
        return Err(Error::Config(format!("sample input has {} values, expected {want}", s.inputs.len())));
    }
    Ok(())
}

/// Trains for exactly `config.epochs` epochs, writing checkpoints and the
/// history CSV into `out_dir`. On divergence the checkpoints already written
/// are kept and an error is returned.
pub fn train(dataset: &SplitDataset, config: &TrainingConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(dataset, &config.arch)?;
    fs::create_dir_all(out_dir)?;
    let pool = build_pool(config.workers)?;

    let mut network = AssociatedNetwork::init(config.arch.clone(), config.seed)?;
    let mut adam = Adam::new(network.n_params(), config.adam());
    let mut history = TrainingHistory::default();
    let n = dataset.train.len();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let order = epoch_order(n, config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let net = &network;
            let results: Vec<(f64, AssociatedNetwork)> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&idx| {
                        let s = &dataset.train[idx];
                        let seed = rng::mix(config.seed, rng::STREAM_DROPOUT, &[epoch as u64, idx as u64]);
                        net.loss_and_gradients(&s.inputs, &s.targets, Mode::Train, seed)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut iter = results.into_iter();
            let (first_loss, mut grads) = iter.next().expect("non-empty batch");
            let mut batch_loss = first_loss;
            for (l, g) in iter {
                batch_loss += l;
                grads.accumulate(&g);
            }
            if !batch_loss.is_finite() {
                history.write(out_dir)?;
                return Err(Error::Divergence(format!("non-finite training loss in epoch {}", epoch + 1)));
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut network, &grads)?;
        }

        let train_mse = loss_sum / n as f64;
        let val_mse = mean_loss(&network, &dataset.validation, &pool)?;
        if !val_mse.is_finite() {
            history.write(out_dir)?;
            return Err(Error::Divergence(format!("non-finite validation loss in epoch {}", epoch + 1)));
        }
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_mse,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });

        if (epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs {
            let ckpt = Checkpoint {
                epoch: epoch + 1,
                train_mse,
                val_mse,
                config: config.clone(),
                network: network.clone(),
                adam: adam.clone(),
                tickers: dataset.tickers.clone(),
                normalization: dataset.params.clone(),
            };
            save_checkpoint(&ckpt, &out_dir.join(checkpoint_file_name(epoch + 1)))?;
        }
        history.write(out_dir)?;
    }

    Ok(TrainOutcome { history, out_dir: out_dir.to_path_buf(), steps: adam.t, network })
}

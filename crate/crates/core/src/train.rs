//! Seeded mini-batch training with exact checkpoint/resume.
//!
//! Every random choice derives from `TrainConfig::seed`: initial weights
//! come from the seed itself, and the sample order of epoch `e` is a shuffle
//! seeded with `seed + e`. A checkpoint written after epoch `k` stores the
//! parameters, both Adam moment sets and the step counter. Resuming from it
//! therefore reproduces an uninterrupted run bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, AdamConfig, AutodiffError, Gradients};
use crate::model::{read_line, read_params, write_params, GridEgoSource, Model, ModelError, SceneTensors, Variant};
use crate::scene::ScenePiece;

pub const CKPT_MAGIC: &[u8] = b"TPLAB-CKPT-v1\n";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optimizer(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint is for {found}, config asks for {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("non-finite loss at step {0}")]
    Diverged(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: u32,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(default)]
    pub grid_ego: GridEgoSource,
}

impl TrainConfig {
    pub fn new(variant: Variant, seed: u64) -> Self {
        Self { variant, epochs: 20, batch_size: 8, adam: AdamConfig::default(), seed, grid_ego: GridEgoSource::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u32,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_epoch_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Shuffled sample order of one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(epoch)));
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mean loss and mean gradients over a batch, accumulated in batch order.
pub fn batch_gradients(model: &Model<f64>, batch: &[&SceneTensors<f64>]) -> Result<(f64, Gradients<f64>), TrainError> {
    let mut total = Gradients::empty(model.params().len());
    let mut loss = 0.0;
    for scene in batch {
        let (l, g) = model.loss_and_grads(scene)?;
        loss += l;
        total.accumulate(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Training state that can be advanced epoch by epoch and checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f64>,
    pub adam: Adam<f64>,
    pub epochs_done: u32,
    pub log: TrainLog,
    pub provenance: BTreeMap<String, String>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::init(config.variant, config.seed).with_grid_ego(config.grid_ego);
        let adam = Adam::new(model.params(), config.adam);
        Ok(Self { config, model, adam, epochs_done: 0, log: TrainLog::default(), provenance: BTreeMap::new() })
    }

    /// Runs one epoch over `train` and returns its mean batch loss.
    pub fn run_epoch(&mut self, train: &[SceneTensors<f64>]) -> Result<f64, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyTrainSet);
        }
        let started = Instant::now();
        let epoch = self.epochs_done;
        let order = epoch_order(train.len(), self.config.seed, epoch);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&SceneTensors<f64>> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(&self.model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged(self.adam.step_count() + 1));
            }
            self.adam.step(self.model.params_mut(), &grads)?;
            self.log.steps.push(StepRecord { step: self.adam.step_count(), epoch, loss });
            sum += loss;
            batches += 1;
        }
        let mean_loss = sum / batches as f64;
        self.log.epochs.push(EpochRecord { epoch, mean_loss, seconds: started.elapsed().as_secs_f64() });
        self.epochs_done += 1;
        Ok(mean_loss)
    }

    /// Trains until `config.epochs` are done. `after_epoch` sees the trainer
    /// after every epoch (for checkpointing) and may stop early by returning
    /// `Ok(false)`.
    pub fn run(
        &mut self,
        train: &[SceneTensors<f64>],
        mut after_epoch: impl FnMut(&Trainer) -> Result<bool, TrainError>,
    ) -> Result<(), TrainError> {
        while self.epochs_done < self.config.epochs {
            self.run_epoch(train)?;
            if !after_epoch(self)? {
                break;
            }
        }
        Ok(())
    }

    /// Continues from a checkpoint under `config`; variant, seed and batch
    /// size must match the run that wrote it.
    pub fn resume(checkpoint: Trainer, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let stored = &checkpoint.config;
        if stored.variant != config.variant {
            return Err(TrainError::VariantMismatch { expected: config.variant, found: stored.variant });
        }
        if stored.seed != config.seed || stored.batch_size != config.batch_size || stored.adam != config.adam {
            return Err(TrainError::Config("seed, batch size and optimizer settings must match the checkpoint".into()));
        }
        Ok(Trainer { config, ..checkpoint })
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<(), TrainError> {
        let header = CheckpointHeader {
            epochs_done: self.epochs_done,
            adam_step: self.adam.step_count(),
            config: self.config.clone(),
            log: self.log.clone(),
        };
        let ck = |e: std::io::Error| TrainError::Checkpoint(e.to_string());
        w.write_all(CKPT_MAGIC).map_err(ck)?;
        let json = serde_json::to_string(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        w.write_all(json.as_bytes()).map_err(ck)?;
        w.write_all(b"\n").map_err(ck)?;
        let mut params = Vec::new();
        write_params(&self.model, &self.provenance, &mut params)?;
        w.write_u64::<LittleEndian>(params.len() as u64).map_err(ck)?;
        w.write_all(&params).map_err(ck)?;
        for moments in [self.adam.first_moments(), self.adam.second_moments()] {
            for m in moments {
                for &v in m {
                    w.write_f64::<LittleEndian>(v).map_err(ck)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self, TrainError> {
        let ck = |e: std::io::Error| TrainError::Checkpoint(e.to_string());
        let mut magic = vec![0u8; CKPT_MAGIC.len()];
        r.read_exact(&mut magic).map_err(ck)?;
        if magic != CKPT_MAGIC {
            return Err(TrainError::Checkpoint("bad magic; not a TPLAB-CKPT-v1 file".into()));
        }
        let header: CheckpointHeader = serde_json::from_str(&read_line(&mut r).map_err(|e| TrainError::Checkpoint(e.to_string()))?)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let len = r.read_u64::<LittleEndian>().map_err(ck)?;
        let mut params = vec![0u8; usize::try_from(len).map_err(|_| TrainError::Checkpoint("params block too large".into()))?];
        r.read_exact(&mut params).map_err(ck)?;
        let (model, params_header) = read_params::<f64>(params.as_slice())?;
        if model.variant() != header.config.variant {
            return Err(TrainError::Checkpoint("params block variant differs from checkpoint header".into()));
        }
        let mut read_moments = || -> Result<Vec<Vec<f64>>, TrainError> {
            model
                .params()
                .ids()
                .map(|id| {
                    (0..model.params().get(id).len())
                        .map(|_| r.read_f64::<LittleEndian>())
                        .collect::<Result<Vec<f64>, _>>()
                        .map_err(|_| TrainError::Checkpoint("optimizer state missing or truncated".into()))
                })
                .collect()
        };
        let m = read_moments()?;
        let v = read_moments()?;
        let adam = Adam::from_state(model.params(), header.config.adam, header.adam_step, m, v)?;
        Ok(Trainer {
            config: header.config,
            model,
            adam,
            epochs_done: header.epochs_done,
            log: header.log,
            provenance: params_header.provenance,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    epochs_done: u32,
    adam_step: u64,
    config: TrainConfig,
    log: TrainLog,
}

pub fn scene_tensors(pieces: &[ScenePiece]) -> Result<Vec<SceneTensors<f64>>, TrainError> {
    Ok(pieces.iter().map(SceneTensors::from_piece).collect::<Result<_, _>>()?)
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(pieces: &[ScenePiece], config: &TrainConfig) -> Result<(Model<f64>, TrainLog), TrainError> {
    let scenes = scene_tensors(pieces)?;
    let mut trainer = Trainer::new(config.clone())?;
    trainer.run(&scenes, |_| Ok(true))?;
    Ok((trainer.model, trainer.log))
}

/// Finishes a run from a checkpoint.
pub fn resume(
    checkpoint: Trainer,
    pieces: &[ScenePiece],
    config: &TrainConfig,
) -> Result<(Model<f64>, TrainLog), TrainError> {
    let scenes = scene_tensors(pieces)?;
    let mut trainer = Trainer::resume(checkpoint, config.clone())?;
    trainer.run(&scenes, |_| Ok(true))?;
    Ok((trainer.model, trainer.log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::new(Variant::CnnLstm, 1);
        assert_eq!((c.epochs, c.batch_size, c.adam.lr), (20, 8, 1e-3));
        assert!(TrainConfig { epochs: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn epoch_orders_differ_and_repeat() {
        let a = epoch_order(100, 3, 0);
        assert_eq!(a, epoch_order(100, 3, 0));
        assert_ne!(a, epoch_order(100, 3, 1));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn empty_train_set_rejected() {
        let mut t = Trainer::new(TrainConfig::new(Variant::VLstm, 1)).unwrap();
        assert!(matches!(t.run_epoch(&[]), Err(TrainError::EmptyTrainSet)));
        assert!(matches!(train(&[], &TrainConfig::new(Variant::VLstm, 1)), Err(TrainError::EmptyTrainSet)));
    }
}

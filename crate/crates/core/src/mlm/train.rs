//! Masked-token training with plain SGD and global-norm clipping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::MlmParams;
use super::vocab::{Vocabulary, FIRST_WORD, MASK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mask_prob: f64,
    pub seed: u64,
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn pretrain_defaults() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 5,
            mask_prob: 0.15,
            seed: 0,
            clip_norm: 1.0,
        }
    }

    pub fn finetune_defaults() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 3,
            ..Self::pretrain_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Config(format!(
                "mask probability must lie in (0, 1), got {}",
                self.mask_prob
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("gradient clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// What happened to one selected position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub input: Vec<u32>,
    /// `(position, original id)` pairs the loss is computed on.
    pub targets: Vec<(usize, u32)>,
    pub actions: Vec<MaskAction>,
}

/// Selects each non-special position with probability `mask_prob`; a
/// selected position becomes `[MASK]` 80% of the time, a uniformly random
/// word 10% of the time, and is left unchanged otherwise.
pub fn mask_sequence(ids: &[u32], vocab_size: usize, mask_prob: f64, rng: &mut impl Rng) -> MaskedExample {
    let mut input = ids.to_vec();
    let mut targets = Vec::new();
    let mut actions = Vec::new();
    for (pos, &id) in ids.iter().enumerate() {
        if Vocabulary::is_special(id) {
            continue;
        }
        if rng.random::<f64>() >= mask_prob {
            continue;
        }
        targets.push((pos, id));
        let u: f64 = rng.random();
        let action = if u < 0.8 {
            input[pos] = MASK;
            MaskAction::Mask
        } else if u < 0.9 && (vocab_size as u32) > FIRST_WORD {
            input[pos] = rng.random_range(FIRST_WORD..vocab_size as u32);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        actions.push(action);
    }
    MaskedExample {
        input,
        targets,
        actions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    /// Target-weighted mean loss of each epoch.
    pub epoch_means: Vec<f64>,
    pub skipped_too_long: usize,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,step,loss")?;
        for p in &self.curve {
            writeln!(out, "{},{},{}", p.epoch, p.step, p.loss)?;
        }
        Ok(())
    }
}

/// Runs SGD on `params` over the encoded sequences `data`.
///
/// Sequences longer than the model's `max_len` are skipped and counted.
/// Every epoch reshuffles the data and redraws the masks from one RNG
/// seeded with `cfg.seed`, so a run is reproducible bit for bit.
pub fn train(params: &mut MlmParams, data: &[Vec<u32>], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let max_len = params.config.max_len;
    let usable: Vec<&Vec<u32>> = data.iter().filter(|s| s.len() <= max_len).collect();
    let mut report = TrainReport {
        skipped_too_long: data.len() - usable.len(),
        ..TrainReport::default()
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if usable.is_empty() {
        return Err(Error::Argument("no trainable sequences".into()));
    }
    let vocab_size = params.config.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grad = params.zeros_like();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_targets = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.fill_zero();
            let mut batch_loss = 0.0;
            let mut batch_targets = 0usize;
            for &i in batch {
                let ex = mask_sequence(usable[i], vocab_size, cfg.mask_prob, &mut rng);
                if ex.targets.is_empty() {
                    continue;
                }
                batch_loss += params.loss_and_grad(&ex.input, &ex.targets, &mut grad)?;
                batch_targets += ex.targets.len();
            }
            if batch_targets == 0 {
                continue;
            }
            step += 1;
            let mean = batch_loss / batch_targets as f64;
            if !mean.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    batch: batch_idx,
                });
            }
            grad.scale(1.0 / batch_targets as f64);
            let norm = grad.squared_norm().sqrt();
            if norm > cfg.clip_norm {
                grad.scale(cfg.clip_norm / norm);
            }
            params.apply_update(&grad, cfg.learning_rate);
            report.curve.push(LossPoint { epoch, step, loss: mean });
            epoch_loss += batch_loss;
            epoch_targets += batch_targets;
        }
        report.epoch_means.push(if epoch_targets > 0 {
            epoch_loss / epoch_targets as f64
        } else {
            f64::NAN
        });
    }
    Ok(report)
}

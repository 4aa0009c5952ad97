//! Mini-batch SGD training loop.

use std::collections::BTreeMap;

use cjade_nn::{Sgd, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::multiscale::scale_view;
use super::{ModelArtifact, ModelError};
use crate::image::{crop, resize_bilinear};

/// A training example: an input tensor without batch axis and its class.
pub trait Labeled {
    fn input(&self) -> &Tensor;
    fn label(&self) -> usize;
}

impl Labeled for (Tensor, usize) {
    fn input(&self) -> &Tensor {
        &self.0
    }
    fn label(&self) -> usize {
        self.1
    }
}

/// On-the-fly input augmentation applied to each training batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    None,
    /// Each sample is shown as-is, at one of the reduced inference scales, or
    /// as a random crop resized back to the input size.
    ScaleAndCrop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Learning rate is multiplied by `decay_factor` from this epoch on.
    pub decay_epoch: usize,
    pub decay_factor: f32,
    pub weight_decay: f32,
    pub bn_momentum: f32,
    pub augment: Augment,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            decay_epoch: (2 * epochs).div_ceil(3),
            decay_factor: 0.1,
            weight_decay: 0.0,
            bn_momentum: 0.9,
            augment: Augment::None,
            seed,
        }
    }

    pub fn with_augment(mut self, augment: Augment) -> Self {
        self.augment = augment;
        self
    }

    fn lr_at(&self, epoch: usize) -> f32 {
        if epoch >= self.decay_epoch {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f32,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub epochs: Vec<EpochLog>,
    pub final_val_accuracy: f64,
}

fn check_dataset<T: Labeled>(data: &[T], classes: usize) -> Result<(), ModelError> {
    let mut counts = BTreeMap::new();
    for ex in data {
        if ex.label() >= classes {
            return Err(ModelError::DegenerateDataset(format!(
                "label {} outside {classes} classes",
                ex.label()
            )));
        }
        *counts.entry(ex.label()).or_insert(0usize) += 1;
    }
    let usable = counts.values().filter(|&&n| n >= 10).count();
    if usable < 2 || counts.values().any(|&n| n < 10) {
        return Err(ModelError::DegenerateDataset(format!(
            "need at least 2 classes with 10 samples each, got {counts:?}"
        )));
    }
    Ok(())
}

fn augment_sample(img: &Tensor, aug: Augment, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    match aug {
        Augment::None => img.clone(),
        Augment::ScaleAndCrop => match rng.random_range(0..4) {
            0 | 1 => img.clone(),
            2 => scale_view(img, [0.75, 0.5][rng.random_range(0..2)], size),
            _ => {
                let side = rng.random_range(size / 2..=size);
                let w = rng.random_range(side * 3 / 4..=side).min(size);
                let h = rng.random_range(side * 3 / 4..=side).min(size);
                let x = rng.random_range(0..=size - w);
                let y = rng.random_range(0..=size - h);
                resize_bilinear(&crop(img, x, y, w, h), size, size)
            }
        },
    }
}

/// Accuracy (fraction in `[0, 1]`) of plain inference over `data`.
pub fn evaluate<T: Labeled>(model: &ModelArtifact, data: &[T]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in data.chunks(64) {
        let refs: Vec<&Tensor> = chunk.iter().map(|e| e.input()).collect();
        let logits = model.network.forward(&Tensor::stack(&refs)?)?;
        let c = model.class_count();
        for (row, ex) in logits.data().chunks(c).zip(chunk) {
            correct += usize::from(Tensor::argmax(row) == ex.label());
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains in place and returns the per-epoch log. `masks` (one entry per
/// parameter tensor) freezes pruned weights at zero.
pub(crate) fn train_masked<T: Labeled>(
    model: &mut ModelArtifact,
    train_set: &[T],
    val_set: &[T],
    config: &TrainConfig,
    masks: Option<Vec<Option<Vec<bool>>>>,
) -> Result<TrainLog, ModelError> {
    check_dataset(train_set, model.class_count())?;
    if config.batch_size == 0 {
        return Err(ModelError::Invalid("batch size must be positive".into()));
    }
    let size = model.input_size();
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    if let Some(m) = masks {
        opt = opt.with_masks(m);
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        order.shuffle(&mut rng);
        opt.learning_rate = config.lr_at(epoch);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            // a batch of one gives degenerate batch statistics
            if idx.len() < 2 {
                continue;
            }
            let views: Vec<Tensor> = idx
                .iter()
                .map(|&i| augment_sample(train_set[i].input(), config.augment, size, &mut rng))
                .collect();
            let refs: Vec<&Tensor> = views.iter().collect();
            let x = Tensor::stack(&refs)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train_set[i].label()).collect();
            let (loss, mut grads, tape) = model.network.loss_and_gradients(&x, &labels)?;
            if config.weight_decay > 0.0 {
                for (g, p) in grads
                    .tensors
                    .iter_mut()
                    .zip(&model.network.weights().params)
                {
                    if p.role.is_prunable() {
                        for (gv, &wv) in g.data_mut().iter_mut().zip(p.value.data()) {
                            *gv += config.weight_decay * wv;
                        }
                    }
                }
            }
            opt.step(model.network.weights_mut(), &grads)?;
            model.network.commit_batch_stats(&tape, config.bn_momentum);
            loss_sum += loss as f64;
            batches += 1;
        }
        if !model.network.weights().all_finite() {
            return Err(ModelError::Invalid(format!(
                "training diverged in epoch {epoch}"
            )));
        }
        let val_accuracy = evaluate(model, val_set)?;
        log::debug!(
            "{} epoch {epoch}: loss {:.4} val {:.4}",
            model.meta.name,
            loss_sum / batches.max(1) as f64,
            val_accuracy
        );
        epochs.push(EpochLog {
            epoch,
            learning_rate: opt.learning_rate,
            train_loss: loss_sum / batches.max(1) as f64,
            val_accuracy,
        });
    }
    let final_val_accuracy = match epochs.last() {
        Some(e) => e.val_accuracy,
        None => evaluate(model, val_set)?,
    };
    model.meta.val_accuracy = Some(final_val_accuracy);
    model.meta.training_seed = config.seed;
    Ok(TrainLog {
        config: config.clone(),
        epochs,
        final_val_accuracy,
    })
}

/// Trains a copy of `model`; deterministic for a fixed `config.seed`.
pub fn train<T: Labeled>(
    model: &ModelArtifact,
    train_set: &[T],
    val_set: &[T],
    config: &TrainConfig,
) -> Result<(ModelArtifact, TrainLog), ModelError> {
    let mut m = model.clone();
    let log = train_masked(&mut m, train_set, val_set, config, None)?;
    Ok((m, log))
}

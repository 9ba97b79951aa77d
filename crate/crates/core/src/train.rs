//! Mini-batch training of a fusion head on in-memory feature matrices.
//!
//! Wall-clock timing and logging belong to the caller; this module only
//! advances the optimizer one epoch at a time.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{predict, FusionModel};
use crate::linalg::Scalar;
use crate::loss::batch_cross_entropy;
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
}

fn default_lr() -> f64 {
    3e-4
}
fn default_batch_size() -> usize {
    128
}
fn default_epochs() -> usize {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            optimizer: Optimizer::Adam,
            loss: LossKind::CrossEntropy,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::TrainConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::TrainConfig("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Optimizer steps in one epoch over `n` samples; the last partial batch counts.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Row-aligned image features, text features and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    image_dim: usize,
    text_dim: usize,
    images: Vec<T>,
    texts: Vec<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(image_dim: usize, text_dim: usize) -> Self {
        FeatureSet {
            image_dim,
            text_dim,
            images: Vec::new(),
            texts: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, image: &[T], text: &[T], label: usize) -> Result<()> {
        if image.len() != self.image_dim {
            return Err(Error::Shape {
                modality: "image",
                expected: self.image_dim,
                actual: image.len(),
            });
        }
        if text.len() != self.text_dim {
            return Err(Error::Shape {
                modality: "text",
                expected: self.text_dim,
                actual: text.len(),
            });
        }
        if label >= crate::vocab::NUM_CLASSES {
            return Err(Error::ClassIndex(label));
        }
        self.images.extend_from_slice(image);
        self.texts.extend_from_slice(text);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, row: usize) -> &[T] {
        &self.images[row * self.image_dim..(row + 1) * self.image_dim]
    }

    pub fn text(&self, row: usize) -> &[T] {
        &self.texts[row * self.text_dim..(row + 1) * self.text_dim]
    }

    /// Copies the selected rows into contiguous batch buffers.
    pub fn gather(&self, rows: &[usize]) -> (Vec<T>, Vec<T>, Vec<usize>) {
        let mut images = Vec::with_capacity(rows.len() * self.image_dim);
        let mut texts = Vec::with_capacity(rows.len() * self.text_dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            images.extend_from_slice(self.image(r));
            texts.extend_from_slice(self.text(r));
            labels.push(self.labels[r]);
        }
        (images, texts, labels)
    }

    fn check_model(&self, model: &FusionModel<T>) -> Result<()> {
        let cfg = model.config();
        if cfg.image_dim != self.image_dim {
            return Err(Error::Shape {
                modality: "image",
                expected: cfg.image_dim,
                actual: self.image_dim,
            });
        }
        if cfg.text_dim != self.text_dim {
            return Err(Error::Shape {
                modality: "text",
                expected: cfg.text_dim,
                actual: self.text_dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    /// Percentage of samples whose pre-update prediction was correct.
    pub train_accuracy: f64,
    pub steps: usize,
}

pub struct Trainer<T> {
    model: FusionModel<T>,
    optimizer: Adam<T>,
    config: TrainConfig,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: FusionModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(
            AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            },
            &model,
        );
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            optimizer,
            config,
            epochs_done: 0,
        })
    }

    pub fn model(&self) -> &FusionModel<T> {
        &self.model
    }

    pub fn into_model(self) -> FusionModel<T> {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// One pass over `data` in (optionally shuffled) mini-batches.
    pub fn run_epoch(&mut self, data: &FeatureSet<T>) -> Result<EpochStats> {
        data.check_model(&self.model)?;
        if data.is_empty() {
            return Err(Error::TrainConfig("training set is empty".into()));
        }
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        if self.config.shuffle {
            order.shuffle(&mut self.rng);
        }

        let classes = self.model.config().num_classes;
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut steps = 0usize;
        for (batch_idx, rows) in order.chunks(self.config.batch_size).enumerate() {
            let (images, texts, labels) = data.gather(rows);
            let trace = self
                .model
                .forward_trace(&images, &texts, rows.len(), Some(&mut self.rng))?;
            let (loss, dlogits) = batch_cross_entropy(&trace.logits, &labels, classes)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx + 1,
                });
            }
            for (row_logits, label) in trace.logits.chunks_exact(classes).zip(&labels) {
                if predict(row_logits)? == *label {
                    correct += 1;
                }
            }
            let grads = self.model.backward(&trace, &images, &texts, &dlogits);
            self.optimizer.step(&mut self.model, &grads);
            loss_sum += loss * rows.len() as f64;
            steps += 1;
        }
        self.epochs_done = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: 100.0 * correct as f64 / data.len() as f64,
            steps,
        })
    }

    /// Runs `config.epochs` epochs and returns the per-epoch statistics.
    pub fn fit(&mut self, data: &FeatureSet<T>) -> Result<Vec<EpochStats>> {
        (0..self.config.epochs).map(|_| self.run_epoch(data)).collect()
    }
}

//! Optimization loop: staircase learning-rate decay, binary cross-entropy,
//! Adam, and best-validation-loss checkpointing.

mod history;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::{Array1, ArrayD};

pub use history::{learning_curves, read_history, write_history};

use crate::augment::{batch_stream, AugmentationPolicy, BatchSpec};
use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, PatchRecord};
use crate::model::{ClassifierModel, Mode};
use crate::rng;

/// Probabilities are clipped to `[EPSILON, 1 - EPSILON]` before the log.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub initial_lr: f64,
    pub decay_rate: f64,
    pub decay_every_epochs: usize,
    /// Decay in whole steps every `decay_every_epochs`; otherwise continuously.
    pub staircase: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            initial_lr: 0.001,
            decay_rate: 0.9,
            decay_every_epochs: 2,
            staircase: true,
            epochs: 60,
            batch_size: 128,
            loss: Loss::BinaryCrossEntropy,
            optimizer: Optimizer::Adam,
            seed: 42,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidArgument("initial_lr must be positive".into()));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::InvalidArgument("decay_rate must be in (0, 1]".into()));
        }
        if self.decay_every_epochs == 0 {
            return Err(Error::InvalidArgument("decay_every_epochs must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `initial_lr * decay_rate ^ (epoch / decay_every_epochs)`, with the exponent
/// floored when `staircase` is set.
pub fn lr_at_epoch(config: &TrainingConfig, epoch: usize) -> f64 {
    let steps = if config.staircase {
        (epoch / config.decay_every_epochs) as f64
    } else {
        epoch as f64 / config.decay_every_epochs as f64
    };
    config.initial_lr * config.decay_rate.powf(steps)
}

fn clip(p: f64) -> f64 {
    p.clamp(EPSILON, 1.0 - EPSILON)
}

/// Mean of `-[y ln p + (1 - y) ln(1 - p)]` over clipped probabilities.
pub fn binary_cross_entropy(p: &Array1<f64>, y: &Array1<f64>) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: y.len(),
        });
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clip(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Derivative of [`binary_cross_entropy`] with respect to each probability.
/// Zero where the clip is active.
pub fn binary_cross_entropy_grad(p: &Array1<f64>, y: &Array1<f64>) -> Result<Array1<f64>> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: y.len(),
        });
    }
    let n = p.len().max(1) as f64;
    Ok(Array1::from_iter(p.iter().zip(y).map(|(&p, &y)| {
        if p <= EPSILON || p >= 1.0 - EPSILON {
            0.0
        } else {
            -(y / p - (1.0 - y) / (1.0 - p)) / n
        }
    })))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<ArrayD<f64>>,
    second: Vec<ArrayD<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl Adam {
    /// Update the trainable parameters of `model` in place.
    pub fn step(&mut self, model: &mut ClassifierModel, grads: &[ArrayD<f64>], lr: f64) {
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let trainable: Vec<bool> = model
            .named_params()
            .iter()
            .map(|(n, _)| model.is_trainable(n))
            .collect();
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (i, mut param) in model.params_mut().into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let g = &grads[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            ndarray::Zip::from(&mut param)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Tracks the running minimum validation loss; the first strict minimum wins.
#[derive(Debug, Clone, Default)]
pub struct CheckpointTracker {
    best: Option<(usize, f64)>,
}

impl CheckpointTracker {
    /// Returns true when `val_loss` strictly improves on every earlier epoch.
    /// A NaN never improves.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        match self.best {
            Some((_, best)) if !(val_loss < best) => false,
            _ => {
                self.best = Some((epoch, val_loss));
                true
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

/// Weight archives of every improving epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStore {
    pub directory: PathBuf,
    pub saved: BTreeMap<usize, PathBuf>,
}

impl CheckpointStore {
    pub fn new(directory: &Path) -> Result<Self> {
        fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
        Ok(CheckpointStore {
            directory: directory.to_path_buf(),
            saved: BTreeMap::new(),
        })
    }

    pub fn save(&mut self, epoch: usize, model: &ClassifierModel) -> Result<&Path> {
        let path = self.directory.join(format!("epoch_{epoch:03}.ntar"));
        model.save(&path)?;
        self.saved.insert(epoch, path);
        Ok(&self.saved[&epoch])
    }

    pub fn latest(&self) -> Option<(usize, &Path)> {
        self.saved.iter().next_back().map(|(&e, p)| (e, p.as_path()))
    }

    pub fn best_path(&self) -> PathBuf {
        self.directory.join("best.ntar")
    }
}

/// Mean loss (including the L2 penalty) and accuracy of `model` over
/// `records`, in eval mode without augmentation.
pub fn evaluate_loss(model: &ClassifierModel, records: &[PatchRecord], spec: &BatchSpec) -> Result<(f64, f64)> {
    let spec = BatchSpec {
        shuffle: false,
        ..*spec
    };
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut n = 0usize;
    for batch in batch_stream(records, None, &spec, 0)? {
        let p = model.predict(&batch.images)?;
        total += binary_cross_entropy(&p, &batch.labels)? * batch.len() as f64;
        correct += count_correct(&p, &batch.labels);
        n += batch.len();
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no readable images to evaluate".into()));
    }
    Ok((total / n as f64 + model.l2_penalty(), correct as f64 / n as f64))
}

fn count_correct(p: &Array1<f64>, y: &Array1<f64>) -> usize {
    p.iter().zip(y).filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5)).count()
}

/// Loss and gradients of one minibatch. The objective is the mean binary
/// cross-entropy plus the L2 penalty; dropout masks are drawn from `rng`.
pub fn loss_and_gradients(
    model: &ClassifierModel,
    images: &ndarray::Array4<f64>,
    labels: &Array1<f64>,
    rng: &mut dyn rand::RngCore,
) -> Result<(f64, Array1<f64>, crate::model::Gradients)> {
    let trace = model.trace(images, Mode::Train, rng)?;
    let p = trace.probabilities.clone();
    let loss = binary_cross_entropy(&p, labels)? + model.l2_penalty();
    let d_prob = binary_cross_entropy_grad(&p, labels)?;
    let mut grads = model.backward(&trace, &d_prob);
    model.add_l2_gradient(&mut grads);
    Ok((loss, p, grads))
}

/// Train for `config.epochs` epochs, checkpoint every strict improvement of
/// the validation loss, then reload the best checkpoint into `model`.
pub fn run_training(
    model: &mut ClassifierModel,
    manifest: &DatasetManifest,
    policy: Option<&AugmentationPolicy>,
    config: &TrainingConfig,
    spec: &BatchSpec,
    checkpoint_dir: &Path,
) -> Result<(TrainingHistory, CheckpointStore)> {
    config.validate()?;
    if manifest.train.is_empty() || manifest.val.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and val partitions".into(),
        ));
    }
    let train_spec = BatchSpec {
        batch_size: config.batch_size,
        seed: config.seed,
        ..*spec
    };
    let mut store = CheckpointStore::new(checkpoint_dir)?;
    let mut tracker = CheckpointTracker::default();
    let mut history = TrainingHistory::default();
    let mut adam = Adam::default();
    let mut dropout_rng = rng::seeded(rng::derive_seed(config.seed, &[0xD0]));

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch in batch_stream(&manifest.train, policy, &train_spec, epoch as u64)? {
            let (loss, p, grads) = loss_and_gradients(model, &batch.images, &batch.labels, &mut dropout_rng)?;
            adam.step(model, &grads.params, lr);
            loss_sum += loss * batch.len() as f64;
            correct += count_correct(&p, &batch.labels);
            seen += batch.len();
        }
        model.set_mode(Mode::Eval);
        let (val_loss, val_acc) = evaluate_loss(model, &manifest.val, &train_spec)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_loss,
            val_acc,
        };
        info!(
            "epoch {epoch}: lr={lr:.6} loss={:.4} acc={:.4} val_loss={val_loss:.4} val_acc={val_acc:.4}",
            record.train_loss, record.train_acc
        );
        history.records.push(record);
        if !val_loss.is_finite() {
            history.best_epoch = tracker.best_epoch().unwrap_or(0);
            return Err(Error::DivergenceDetected {
                epoch,
                history: Box::new(history),
            });
        }
        if tracker.observe(epoch, val_loss) {
            store.save(epoch, model)?;
        }
    }

    let best_epoch = tracker.best_epoch().expect("at least one finite epoch");
    history.best_epoch = best_epoch;
    let best_path = &store.saved[&best_epoch];
    *model = ClassifierModel::load(best_path)?;
    fs::copy(best_path, store.best_path()).map_err(|e| Error::io(store.best_path(), e))?;
    Ok((history, store))
}

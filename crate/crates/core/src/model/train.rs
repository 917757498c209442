use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax, Extractor, Head, ModelSnapshot};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::eval::macro_f1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Seed for the per-epoch shuffling order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.patience > self.max_epochs && self.max_epochs > 0 {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    pub initial_dev_macro_f1: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the returned parameters; 0 means the starting point.
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
}

impl TrainingLog {
    /// One JSON object per epoch: `{"epoch", "loss", "dev_macro_f1"}`.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }
}

/// Adam with bias-corrected moment estimates, one moment buffer per
/// parameter block.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: &TrainConfig, shapes: &[usize]) -> Adam {
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_epsilon,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Cross-entropy of the masked head and its gradients with respect to W and
/// b (masked entries of W get zero gradient) and to the features.
pub(crate) fn head_loss_grad(head: &Head, features: &[f64], label: usize) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = softmax(&head.logits(features));
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let mut dlogits = p;
    dlogits[label] -= 1.0;
    let d = head.features;
    let mut gw = vec![0.0; head.classes * d];
    let mut dfeat = vec![0.0; d];
    for c in 0..head.classes {
        for j in 0..d {
            let q = head.mask[c * d + j];
            gw[c * d + j] = dlogits[c] * features[j] * q;
            dfeat[j] += dlogits[c] * head.weights[c * d + j] * q;
        }
    }
    (loss, gw, dlogits, dfeat)
}

impl ModelSnapshot {
    /// Trainable parameter blocks: the extractor's blocks, then W and b.
    /// Embeddings and the mask are not trainable.
    pub fn trainable_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = self.extractor.param_blocks();
        blocks.push(&self.head.weights);
        blocks.push(&self.head.bias);
        blocks
    }

    pub fn trainable_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = self.extractor.param_blocks_mut();
        blocks.push(&mut self.head.weights);
        blocks.push(&mut self.head.bias);
        blocks
    }

    /// Cross-entropy loss of one encoded document and its gradient, laid out
    /// like [`ModelSnapshot::trainable_blocks`].
    pub fn loss_and_gradients(&self, encoded: &[u32], label: usize) -> (f64, Vec<Vec<f64>>) {
        let mut grads: Vec<Vec<f64>> = self
            .extractor
            .param_blocks()
            .iter()
            .map(|b| vec![0.0; b.len()])
            .collect();
        let (loss, gw, gb) = match &self.extractor {
            Extractor::Cnn(cnn) => {
                let fwd = cnn.forward(&self.embeddings, encoded);
                let (loss, gw, gb, dfeat) = head_loss_grad(&self.head, &fwd.features, label);
                cnn.backward(&self.embeddings, encoded, &fwd, &dfeat, &mut grads);
                (loss, gw, gb)
            }
            Extractor::Bilstm(net) => {
                let trace = net.forward(&self.embeddings, encoded);
                let (loss, gw, gb, dfeat) = head_loss_grad(&self.head, &trace.features, label);
                net.backward(&self.embeddings, encoded, &trace, &dfeat, &mut grads);
                (loss, gw, gb)
            }
        };
        grads.push(gw);
        grads.push(gb);
        (loss, grads)
    }

    /// Cross-entropy of one encoded document (used by gradient checks).
    pub fn loss(&self, encoded: &[u32], label: usize) -> f64 {
        let p = self.forward(encoded).probabilities;
        -p[label].max(f64::MIN_POSITIVE).ln()
    }
}

fn sum_into(acc: &mut [Vec<f64>], add: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(add) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn dev_macro_f1(model: &ModelSnapshot, dataset: &Dataset) -> f64 {
    let preds = model.predict_labels(&dataset.dev);
    let labels: Vec<usize> = dataset.dev.iter().map(|d| d.label).collect();
    macro_f1(&preds, &labels, model.class_count())
}

fn check_splits(dataset: &Dataset) -> Result<()> {
    if dataset.train.is_empty() || dataset.dev.is_empty() {
        return Err(Error::Dataset(format!(
            "training needs non-empty train and dev splits, got {:?}",
            dataset.split_sizes()
        )));
    }
    Ok(())
}

/// Trains every trainable parameter with Adam on mean cross-entropy and
/// returns the parameters with the best dev macro F1 (the starting point
/// counts as epoch 0). Stops after `patience` epochs without improvement.
pub fn train(model: &ModelSnapshot, dataset: &Dataset, config: &TrainConfig) -> Result<(ModelSnapshot, TrainingLog)> {
    config.validate()?;
    check_splits(dataset)?;
    if dataset.class_count() != model.class_count() {
        return Err(Error::Dimension {
            expected: model.class_count(),
            found: dataset.class_count(),
            context: "dataset classes",
        });
    }

    let encoded: Vec<(Vec<u32>, usize)> = dataset
        .train
        .iter()
        .map(|d| (model.encode(d), d.label))
        .collect();

    let mut current = model.clone();
    let mut best = model.clone();
    let initial = dev_macro_f1(model, dataset);
    let mut log = TrainingLog {
        initial_dev_macro_f1: initial,
        best_dev_macro_f1: initial,
        ..Default::default()
    };
    let shapes: Vec<usize> = current.trainable_blocks().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(config, &shapes);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| current.loss_and_gradients(&encoded[i].0, encoded[i].1))
                .collect();
            let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                sum_into(&mut grads, g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            adam.step(&mut current.trainable_blocks_mut(), &grads);
            epoch_loss += batch_loss;
        }
        let f1 = dev_macro_f1(&current, dataset);
        log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss / encoded.len() as f64,
            dev_macro_f1: f1,
        });
        if f1 > log.best_dev_macro_f1 {
            log.best_dev_macro_f1 = f1;
            log.best_epoch = epoch;
            best = current.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FinetuneOptions {
    /// Fine-tune even when no feature is disabled.
    pub always: bool,
}

/// Freezes the extractor and the mask and re-trains only W and b on the
/// training split, warm-starting from the current head. Returns the head
/// with the best dev macro F1, the starting head included.
pub fn finetune_head(model: &ModelSnapshot, dataset: &Dataset, config: &TrainConfig) -> Result<(ModelSnapshot, TrainingLog)> {
    config.validate()?;
    check_splits(dataset)?;

    let train_features = model.feature_vectors(&dataset.train);
    let dev_features = model.feature_vectors(&dataset.dev);
    let train_labels: Vec<usize> = dataset.train.iter().map(|d| d.label).collect();
    let dev_labels: Vec<usize> = dataset.dev.iter().map(|d| d.label).collect();
    let classes = model.class_count();
    let dev_f1 = |head: &Head| {
        let preds: Vec<usize> = dev_features
            .iter()
            .map(|f| argmax(&head.logits(f)))
            .collect();
        macro_f1(&preds, &dev_labels, classes)
    };

    let mut head = model.head.clone();
    let mut best = head.clone();
    let initial = dev_f1(&head);
    let mut log = TrainingLog {
        initial_dev_macro_f1: initial,
        best_dev_macro_f1: initial,
        ..Default::default()
    };
    let mut adam = Adam::new(config, &[head.weights.len(), head.bias.len()]);
    let mut order: Vec<usize> = (0..train_features.len()).collect();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x85eb_ca6b).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut gw = vec![0.0; head.weights.len()];
            let mut gb = vec![0.0; head.bias.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, w, b, _) = head_loss_grad(&head, &train_features[i], train_labels[i]);
                batch_loss += loss;
                gw.iter_mut().zip(&w).for_each(|(a, x)| *a += x);
                gb.iter_mut().zip(&b).for_each(|(a, x)| *a += x);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            let grads = vec![
                gw.into_iter().map(|g| g * scale).collect(),
                gb.into_iter().map(|g| g * scale).collect(),
            ];
            adam.step(&mut [&mut head.weights[..], &mut head.bias[..]], &grads);
            epoch_loss += batch_loss;
        }
        let f1 = dev_f1(&head);
        log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss / train_features.len() as f64,
            dev_macro_f1: f1,
        });
        if f1 > log.best_dev_macro_f1 {
            log.best_dev_macro_f1 = f1;
            log.best_epoch = epoch;
            best = head.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let mut out = model.clone();
    out.head = best;
    Ok((out, log))
}

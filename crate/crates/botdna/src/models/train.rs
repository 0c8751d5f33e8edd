//! Mini-batch training with weighted cross-entropy, plateau learning
//! rate decay, and early stopping on validation loss, restoring the
//! best epoch's parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FusionModel, ModelError, Sample};
use crate::tensor::{Adam, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeights {
    /// w_c = N_total / (2 · N_c) computed on the training split.
    Auto,
    Explicit([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub class_weights: ClassWeights,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 1e-5,
            max_epochs: 30,
            batch_size: 32,
            early_stop_patience: 6,
            plateau_factor: 0.1,
            plateau_patience: 3,
            class_weights: ClassWeights::Auto,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub chosen_epoch: usize,
    pub stopped_early: bool,
    pub class_weights: [f64; 2],
}

pub(crate) fn resolve_class_weights(
    cfg: &TrainConfig,
    train: &[Sample],
) -> Result<[f64; 2], ModelError> {
    match cfg.class_weights {
        ClassWeights::Explicit(w) => Ok(w),
        ClassWeights::Auto => {
            let total = train.len() as f64;
            let mut counts = [0usize; 2];
            for s in train {
                counts[s.label as usize] += 1;
            }
            for (c, &count) in counts.iter().enumerate() {
                if count == 0 {
                    return Err(ModelError::MissingClass(c as u8));
                }
            }
            Ok([
                total / (2.0 * counts[0] as f64),
                total / (2.0 * counts[1] as f64),
            ])
        }
    }
}

/// Mean weighted cross-entropy over a sample set, forward only.
pub fn evaluate_loss(
    model: &FusionModel,
    samples: &[Sample],
    weights: [f64; 2],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for chunk in samples.chunks(32) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let labels: Vec<usize> = chunk.iter().map(|s| s.label as usize).collect();
        let mut graph = Graph::new();
        let logits = model.forward_logits(&mut graph, &batch)?;
        let loss = graph.weighted_cross_entropy(logits, &labels, weights)?;
        total += graph.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains in place; shuffling, and therefore the whole run, is
/// deterministic under `seed`.
pub fn train(
    model: &mut FusionModel,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory, ModelError> {
    if train_set.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(ModelError::EmptySplit("val"));
    }
    let weights = resolve_class_weights(cfg, train_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(&model.store, cfg.lr);

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        lr: Vec::new(),
        chosen_epoch: 0,
        stopped_early: false,
        class_weights: weights,
    };

    let mut best_val = f64::INFINITY;
    let mut best_snapshot = model.store.values();
    let mut epochs_without_improvement = 0usize;
    let mut plateau_counter = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
            let mut graph = Graph::new();
            let loss = (|| -> Result<f64, ModelError> {
                let logits = model.forward_logits(&mut graph, &batch)?;
                let loss = graph.weighted_cross_entropy(logits, &labels, weights)?;
                model.store.zero_grads();
                graph.backward(loss)?;
                graph.accumulate_grads(&mut model.store)?;
                adam.step(&mut model.store)?;
                Ok(graph.value(loss).item())
            })()
            .map_err(|e| match e {
                ModelError::Tensor(crate::tensor::TensorError::NonFinite { .. }) => {
                    ModelError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    }
                }
                other => other,
            })?;
            epoch_loss += loss * batch.len() as f64;
        }
        history.train_loss.push(epoch_loss / train_set.len() as f64);
        history.lr.push(adam.lr());

        let val_loss = evaluate_loss(model, val_set, weights)?;
        history.val_loss.push(val_loss);

        if val_loss < best_val {
            best_val = val_loss;
            best_snapshot = model.store.values();
            history.chosen_epoch = epoch;
            epochs_without_improvement = 0;
            plateau_counter = 0;
        } else {
            epochs_without_improvement += 1;
            plateau_counter += 1;
            if plateau_counter >= cfg.plateau_patience {
                adam.set_lr(adam.lr() * cfg.plateau_factor);
                plateau_counter = 0;
            }
            if epochs_without_improvement >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }

    model.store.restore_values(&best_snapshot);
    Ok(history)
}

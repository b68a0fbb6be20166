//! The fine-tuning loop: Adam, per-epoch cosine annealing, best-by-validation
//! checkpoint selection, and evaluation.

pub mod adam;

pub use adam::{AdamConfig, AdamState};

use crate::data::preprocess::{preprocess, AugmentConfig};
use crate::data::DecodedDataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ModelState, RunOpts};
use crate::rng::{mix_seed, RngStream};
use crate::tensor::{Mode, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub lr_min: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            base_lr: 1e-4,
            batch_size: 32,
            lr_min: 0.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.lr_min > self.base_lr {
            return Err(Error::Config("lr_min must not exceed base_lr".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch cosine schedule:
/// lr(t) = lr_min + ½(base − lr_min)(1 + cos(π·t/(T−1))).
/// A single-epoch schedule is the constant base_lr.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs < 2 {
        return cfg.base_lr;
    }
    let t = epoch as f64;
    let t_max = (cfg.epochs - 1) as f64;
    cfg.lr_min + 0.5 * (cfg.base_lr - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t / t_max).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// confusion[true_class][predicted_class] counts.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_row(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode preprocessing of a set of items, parallel over images.
pub fn eval_tensors(
    data: &DecodedDataset,
    indices: &[usize],
    aug: &AugmentConfig,
) -> Result<Vec<Tensor<f32>>> {
    indices
        .par_iter()
        .map(|&i| {
            let mut rng = RngStream::seed(0);
            preprocess(&data.images[i], Mode::Eval, aug, &mut rng)
        })
        .collect()
}

/// Accuracy and confusion counts of `model` on already-preprocessed tensors.
pub fn evaluate_tensors(
    model: &ModelState,
    tensors: &[Tensor<f32>],
    labels: &[usize],
    num_classes: usize,
    batch_size: usize,
) -> Result<EvalResult> {
    if tensors.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty item set".into()));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut correct = 0usize;
    let mut rng = RngStream::seed(0);
    for (chunk, chunk_labels) in tensors
        .chunks(batch_size.max(1))
        .zip(labels.chunks(batch_size.max(1)))
    {
        let batch = Tensor::stack_images(chunk)?;
        let logits = model.forward(&batch, Mode::Eval, &mut rng)?;
        let k = logits.shape()[1];
        for (row, &truth) in logits.data().chunks_exact(k).zip(chunk_labels) {
            let pred = argmax_row(row);
            confusion[truth][pred] += 1;
            if pred == truth {
                correct += 1;
            }
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / tensors.len() as f64,
        confusion,
        total: tensors.len(),
    })
}

/// Convenience wrapper: preprocess (eval mode) then evaluate.
pub fn evaluate(
    model: &ModelState,
    data: &DecodedDataset,
    indices: &[usize],
    aug: &AugmentConfig,
    batch_size: usize,
) -> Result<EvalResult> {
    let tensors = eval_tensors(data, indices, aug)?;
    let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    evaluate_tensors(model, &tensors, &labels, data.num_classes(), batch_size)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_model: ModelState,
    /// Confusion counts of the best model on the validation items.
    pub confusion: Vec<Vec<usize>>,
}

/// Trains one fold and keeps the checkpoint of the best validation epoch
/// (ties go to the earlier epoch).
pub fn train_fold(
    spec: &ModelSpec,
    data: &DecodedDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    fold: usize,
) -> Result<FoldResult> {
    let val_tensors = eval_tensors(data, val_idx, aug)?;
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| data.labels[i]).collect();
    let num_classes = data.num_classes();
    let batch = cfg.batch_size;
    train_fold_with_evaluator(spec, data, train_idx, val_idx, cfg, aug, fold, |model, _| {
        Ok(evaluate_tensors(model, &val_tensors, &val_labels, num_classes, batch)?.accuracy)
    })
}

/// The loop itself, with an injectable validation evaluator.
#[allow(clippy::too_many_arguments)]
pub fn train_fold_with_evaluator<F>(
    spec: &ModelSpec,
    data: &DecodedDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    fold: usize,
    mut validate: F,
) -> Result<FoldResult>
where
    F: FnMut(&ModelState, usize) -> Result<f64>,
{
    cfg.validate()?;
    aug.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Input("train and validation sets must be nonempty".into()));
    }
    let batch_size = if cfg.batch_size > train_idx.len() {
        eprintln!(
            "warning: batch size {} exceeds {} training items; using one full batch",
            cfg.batch_size,
            train_idx.len()
        );
        train_idx.len()
    } else {
        cfg.batch_size
    };

    let mut model = ModelState::build(spec.clone(), mix_seed(cfg.seed, &[fold as u64, 0x6d]))?;
    let mut opt = AdamState::new(model.params(), AdamConfig::default());
    let root = RngStream::seed(cfg.seed);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_accuracy = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelState)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let mut order: Vec<usize> = train_idx.to_vec();
        root.derive(&[fold as u64, epoch as u64, 0x5f]).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(batch_size).enumerate() {
            // Per-image augmentation streams keyed by (seed, image, epoch) so
            // parallel decode order cannot change the result.
            let tensors: Vec<Tensor<f32>> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = root.derive(&[0xa06, i as u64, epoch as u64]);
                    preprocess(&data.images[i], Mode::Train, aug, &mut rng)
                })
                .collect::<Result<_>>()?;
            let images = Tensor::stack_images(&tensors)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();

            let mut fwd_rng = root.derive(&[0xd0, fold as u64, epoch as u64, batch_no as u64]);
            let run = model.forward_run(
                &images,
                &RunOpts {
                    mode: Mode::Train,
                    want_grads: true,
                    bypass_attention: false,
                },
                &mut fwd_rng,
            )?;
            let mut graph = run.graph;
            let loss_id = graph.softmax_cross_entropy(run.logits, &targets)?;
            let loss = graph.scalar(loss_id) as f64;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at fold {fold} epoch {epoch} batch {batch_no}"
                )));
            }
            graph.backward(loss_id);
            for (node, param) in run.param_nodes.iter().zip(model.params_mut()) {
                match graph.grad(*node) {
                    Some(g) => param.grad_accum.data_mut().copy_from_slice(g),
                    None => param.grad_accum.data_mut().fill(0.0),
                }
            }
            opt.step(model.params_mut(), lr)?;
            model.apply_bn_updates(&run.bn_updates);

            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let epoch_loss = loss_sum / seen as f64;
        let acc = validate(&model, epoch)?;
        train_loss.push(epoch_loss);
        val_accuracy.push(acc);
        println!(
            "fold {fold} epoch {epoch:>2}  lr {lr:.3e}  train_loss {epoch_loss:.4}  val_acc {acc:.4}"
        );
        let improved = best.as_ref().map(|(_, b, _)| acc > *b).unwrap_or(true);
        if improved {
            best = Some((epoch, acc, model.clone()));
        }
    }

    let (best_epoch, best_val_accuracy, best_model) = best.expect("at least one epoch ran");
    let confusion = {
        let val_tensors = eval_tensors(data, val_idx, aug)?;
        let val_labels: Vec<usize> = val_idx.iter().map(|&i| data.labels[i]).collect();
        evaluate_tensors(
            &best_model,
            &val_tensors,
            &val_labels,
            data.num_classes(),
            batch_size,
        )?
        .confusion
    };
    Ok(FoldResult {
        fold,
        best_val_accuracy,
        best_epoch,
        train_loss,
        val_accuracy,
        best_model,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            base_lr: 1e-4,
            batch_size: 32,
            lr_min: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let c = cfg(12);
        assert!((cosine_lr(0, &c) - 1e-4).abs() < 1e-12);
        assert!(cosine_lr(11, &c).abs() < 1e-12);
        // midpoint t = (T−1)/2 = 5.5 is not an integer epoch; check the
        // symmetric pair around it instead, and the exact midpoint for T=13.
        let c13 = cfg(13);
        assert!((cosine_lr(6, &c13) - 5e-5).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_nonincreasing() {
        let c = cfg(12);
        let mut last = f64::INFINITY;
        for t in 0..12 {
            let lr = cosine_lr(t, &c);
            assert!(lr <= last + 1e-15);
            last = lr;
        }
    }

    #[test]
    fn single_epoch_schedule_is_constant() {
        let c = cfg(1);
        assert_eq!(cosine_lr(0, &c), 1e-4);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax_row(&[0.3, 0.7, 0.7]), 1);
        assert_eq!(argmax_row(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax_row(&[0.1, 0.0, 0.4]), 2);
    }
}

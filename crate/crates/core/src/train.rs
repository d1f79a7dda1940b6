//! Mini-batch Adam training and argmax evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds batch order and dropout masks.
    pub seed: u64,
    /// Evaluate on the test split every this many epochs (and always after
    /// the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
            eval_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` on epochs that were not evaluated.
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub final_accuracy: f64,
}

fn check_classes(model: &ModelBundle, split: &DatasetSplit) -> Result<()> {
    let cfg = &model.cfg;
    if cfg.num_classes != split.meta.num_classes {
        return Err(Error::contract(format!(
            "model has {} classes, split '{}' has {}",
            cfg.num_classes, split.meta.name, split.meta.num_classes
        )));
    }
    if cfg.seq_len != split.meta.seq_len || cfg.d_x != split.meta.d_x {
        return Err(Error::contract(format!(
            "model expects L = {}, d_x = {}; split '{}' has L = {}, d_x = {}",
            cfg.seq_len, cfg.d_x, split.meta.name, split.meta.seq_len, split.meta.d_x
        )));
    }
    Ok(())
}

/// Trains `model` in place on `train`, evaluating on `test`.
///
/// Fails with a numeric error naming the epoch and batch as soon as a loss
/// or parameter becomes non-finite.
pub fn train(model: &mut ModelBundle, train: &DatasetSplit, test: &DatasetSplit, cfg: &TrainConfig) -> Result<History> {
    check_classes(model, train)?;
    check_classes(model, test)?;
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("batch_size and eval_every must be positive".into()));
    }
    if train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train.batch(idx)?;
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let logits = model.forward(&mut tape, &bound, &x, true, &mut rng)?;
            let loss = tape.cross_entropy(logits, &y)?;
            let value = tape.value(loss)[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {value} at epoch {epoch}, batch {b}"
                )));
            }
            tape.backward(loss)?;
            model.store.zero_grad();
            model.store.accumulate_grads(&tape, &bound)?;
            adam.step(&mut model.store)?;
            if !model.store.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameters after epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += value * idx.len() as f64;
        }
        let test_accuracy = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(evaluate(model, test)?)
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            test_accuracy,
        });
    }
    let final_accuracy = match epochs.last() {
        Some(EpochRecord {
            test_accuracy: Some(a), ..
        }) => *a,
        _ => evaluate(model, test)?,
    };
    Ok(History { epochs, final_accuracy })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Predicted classes in eval mode, `batch_size` samples at a time.
pub fn predict(model: &ModelBundle, split: &DatasetSplit, batch_size: usize) -> Result<Vec<usize>> {
    check_classes(model, split)?;
    let batch_size = batch_size.max(1);
    let all: Vec<usize> = (0..split.len()).collect();
    let mut out = Vec::with_capacity(split.len());
    for idx in all.chunks(batch_size) {
        let (x, _) = split.batch(idx)?;
        let logits = model.logits(&x)?;
        out.extend(logits.data().chunks(model.cfg.num_classes).map(argmax));
    }
    Ok(out)
}

/// Fraction of predictions that match the labels.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Argmax accuracy of `model` on `split`.
pub fn evaluate(model: &ModelBundle, split: &DatasetSplit) -> Result<f64> {
    evaluate_batched(model, split, 256)
}

pub fn evaluate_batched(model: &ModelBundle, split: &DatasetSplit, batch_size: usize) -> Result<f64> {
    Ok(accuracy(&predict(model, split, batch_size)?, &split.y))
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ClassifierModel, GradMode};
use super::{argmax, EncodedInput};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 3e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the pre-update predictions seen during the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

pub(crate) fn labels_of(data: &[EncodedInput], n_classes: usize) -> Result<Vec<usize>> {
    data.iter()
        .enumerate()
        .map(|(index, x)| {
            let label = x.label.ok_or(Error::MissingLabel { index })?;
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
            Ok(label)
        })
        .collect()
}

fn accuracy(model: &ClassifierModel, data: &[EncodedInput]) -> Result<f64> {
    let labels = labels_of(data, model.n_classes())?;
    let seqs: Vec<&[usize]> = data.iter().map(|x| x.ids.as_slice()).collect();
    let logits = model.logits_batch(&seqs, None)?;
    let correct = logits
        .iter()
        .zip(&labels)
        .filter(|(l, &y)| argmax(l) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Minimizes mean cross-entropy with Adam over shuffled minibatches.
///
/// Frozen parameter groups are left untouched. Deterministic given the
/// model, data, and `cfg.seed`.
pub fn train_erm(
    mut model: ClassifierModel,
    train: &[EncodedInput],
    val: Option<&[EncodedInput]>,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainTrace)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("ERM needs lr > 0 and batch_size ≥ 1".into()));
    }
    let labels = labels_of(train, model.n_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let trainable: Vec<usize> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| !model.is_frozen(p.group))
        .map(|(i, _)| i)
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[usize]> = batch.iter().map(|&i| train[i].ids.as_slice()).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let mode = GradMode {
                base: true,
                ..GradMode::NONE
            };
            let fwd = model.forward_batch(&mut tape, &seqs, None, mode)?;
            correct += tape
                .value(fwd.logits)
                .rows()
                .zip(&targets)
                .filter(|(l, &y)| argmax(l) == y)
                .count();
            let loss = tape.cross_entropy(fwd.logits, &targets)?;
            loss_sum += tape.value(loss).item() * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<_> = trainable
                .iter()
                .map(|&i| grads.take(fwd.params[i]).expect("trainable leaf has a gradient"))
                .collect();
            let params = model.params_mut();
            let mut refs: Vec<_> = params
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| trainable.contains(i))
                .map(|(_, p)| &mut p.tensor)
                .collect();
            let grad_refs: Vec<_> = grads.iter().collect();
            adam.step(&mut refs, &grad_refs);
        }
        let val_accuracy = match val {
            Some(v) if !v.is_empty() => Some(accuracy(&model, v)?),
            _ => None,
        };
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
        };
        log::info!(
            "erm epoch {epoch}: loss {:.4} train acc {:.3} val acc {:?}",
            stats.mean_loss,
            stats.train_accuracy,
            stats.val_accuracy
        );
        trace.epochs.push(stats);
    }
    Ok((model, trace))
}

//! Choice of the blending strength α on a small labeled support set.

use serde::{Deserialize, Serialize};

use crate::adapter::{Blend, LoraAdapter};
use crate::error::{Error, Result};
use crate::textenc::{predict_batch, ClassifierModel, EncodedInput};

pub const DEFAULT_SUPPORT_SIZE: usize = 40;

/// `{0.0, 0.1, …, 1.0}`, built from integers so every point is exact.
pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub grid: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub alpha: f64,
    pub accuracy: f64,
}

/// Support accuracy of the blended model.
pub fn support_accuracy(
    model: &ClassifierModel,
    adapter: &LoraAdapter,
    alpha: f64,
    support: &[EncodedInput],
) -> Result<f64> {
    let mut labels = Vec::with_capacity(support.len());
    for (i, x) in support.iter().enumerate() {
        let y = x.label.ok_or(Error::MissingLabel { index: i })?;
        if y >= model.n_classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                n_classes: model.n_classes(),
            });
        }
        labels.push(y);
    }
    let preds = predict_batch(model, support, Some(Blend::new(adapter, alpha)?))?;
    let correct = preds.iter().zip(&labels).filter(|(p, &y)| p.class == y).count();
    Ok(correct as f64 / support.len() as f64)
}

/// Grid search for the α with the highest support accuracy; ties go to the
/// smallest α.
pub fn calibrate(
    model: &ClassifierModel,
    adapter: &LoraAdapter,
    support: &[EncodedInput],
) -> Result<CalibrationResult> {
    if support.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grid = alpha_grid();
    let accuracies = grid
        .iter()
        .map(|&a| support_accuracy(model, adapter, a, support))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &acc) in accuracies.iter().enumerate() {
        if acc > accuracies[best] {
            best = i;
        }
    }
    log::info!("calibrated alpha {} (support accuracy {:.3})", grid[best], accuracies[best]);
    Ok(CalibrationResult {
        alpha: grid[best],
        accuracy: accuracies[best],
        grid,
        accuracies,
    })
}

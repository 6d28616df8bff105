//! Group accuracy, worst-group accuracy, single-token sensitivity, and the
//! split of errors by whether a shortcut was among the important tokens.

use serde::{Deserialize, Serialize};

use crate::adapter::Blend;
use crate::attribution::{hits_shortcut, masked_variants, saliency_batch_with, top_k};
use crate::error::{Error, Result};
use crate::textenc::{predict_batch, ClassifierModel, EncodedInput};

/// Inputs with labels and group ids (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub inputs: Vec<EncodedInput>,
    pub groups: Vec<usize>,
    pub n_groups: usize,
}

impl EvalSet {
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, x)| x.label.ok_or(Error::MissingLabel { index: i }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group_sizes: Vec<usize>,
    /// `None` for empty groups.
    pub group_accuracy: Vec<Option<f64>>,
    /// 1-based ids of groups with no examples.
    pub empty_groups: Vec<usize>,
    pub accuracy: f64,
    /// Minimum over non-empty groups.
    pub worst_group_accuracy: f64,
}

/// Group report from predicted classes.
pub fn report_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    groups: &[usize],
    n_groups: usize,
) -> Result<GroupReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sizes = vec![0usize; n_groups];
    let mut correct = vec![0usize; n_groups];
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(groups) {
        if g == 0 || g > n_groups {
            return Err(Error::InvalidConfig(format!("group id {g} outside 1..={n_groups}")));
        }
        sizes[g - 1] += 1;
        if p == y {
            correct[g - 1] += 1;
        }
    }
    let group_accuracy: Vec<Option<f64>> = sizes
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let worst = group_accuracy
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(GroupReport {
        empty_groups: (1..=n_groups).filter(|g| sizes[g - 1] == 0).collect(),
        accuracy: correct.iter().sum::<usize>() as f64 / predictions.len() as f64,
        worst_group_accuracy: worst,
        group_sizes: sizes,
        group_accuracy,
    })
}

pub fn group_report(model: &ClassifierModel, blend: Option<Blend<'_>>, set: &EvalSet) -> Result<GroupReport> {
    if set.inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = set.labels()?;
    let preds: Vec<usize> = predict_batch(model, &set.inputs, blend)?
        .iter()
        .map(|p| p.class)
        .collect();
    report_from_predictions(&preds, &labels, &set.groups, set.n_groups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MstpsReport {
    pub k: usize,
    pub per_example: Vec<f64>,
    pub mean: f64,
}

/// Mean over inputs of the largest drop or rise in the predicted class's
/// probability when one important token is masked. Important tokens and
/// predictions both come from the evaluated (blended) model.
pub fn mstps(
    model: &ClassifierModel,
    blend: Option<Blend<'_>>,
    inputs: &[EncodedInput],
    k: usize,
) -> Result<MstpsReport> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be ≥ 1".into()));
    }
    let base = predict_batch(model, inputs, blend)?;
    let sal = saliency_batch_with(model, inputs, blend)?;
    let mut masked = Vec::new();
    let mut owner = Vec::new();
    for (i, (x, s)) in inputs.iter().zip(&sal).enumerate() {
        for v in masked_variants(x, i, &top_k(s, k))? {
            masked.push(EncodedInput {
                ids: v.ids,
                tokens: x.tokens.clone(),
                label: None,
            });
            owner.push(i);
        }
    }
    let mut per_example = vec![0.0f64; inputs.len()];
    if !masked.is_empty() {
        let preds = predict_batch(model, &masked, blend)?;
        for (&i, p) in owner.iter().zip(&preds) {
            let y = base[i].class;
            let shift = (base[i].probs[y] - p.probs[y]).abs();
            per_example[i] = per_example[i].max(shift);
        }
    }
    let mean = per_example.iter().sum::<f64>() / inputs.len() as f64;
    Ok(MstpsReport {
        k,
        per_example,
        mean,
    })
}

/// Misclassification rates over the whole set, split by whether the
/// important set of the misclassified input held a shortcut token. The two
/// parts sum to `total`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclassDecomposition {
    pub total: f64,
    pub with_shortcut: f64,
    pub without_shortcut: f64,
    pub n_errors: usize,
    pub n_errors_with_shortcut: usize,
}

pub fn misclass_decomposition(
    model: &ClassifierModel,
    inputs: &[EncodedInput],
    shortcut_tokens: &[String],
    k: usize,
) -> Result<MisclassDecomposition> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels: Vec<usize> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| x.label.ok_or(Error::MissingLabel { index: i }))
        .collect::<Result<_>>()?;
    let preds = predict_batch(model, inputs, None)?;
    let wrong: Vec<EncodedInput> = inputs
        .iter()
        .zip(&preds)
        .zip(&labels)
        .filter(|((_, p), &y)| p.class != y)
        .map(|((x, _), _)| x.clone())
        .collect();
    let n = inputs.len() as f64;
    let mut with = 0;
    if !wrong.is_empty() {
        let sal = saliency_batch_with(model, &wrong, None)?;
        with = wrong
            .iter()
            .zip(&sal)
            .filter(|(x, s)| hits_shortcut(x, &top_k(s, k), shortcut_tokens))
            .count();
    }
    let n_errors = wrong.len();
    Ok(MisclassDecomposition {
        total: n_errors as f64 / n,
        with_shortcut: with as f64 / n,
        without_shortcut: (n_errors - with) as f64 / n,
        n_errors,
        n_errors_with_shortcut: with,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_predictor_on_balanced_binary() {
        let labels = [1, 1, 0, 0];
        let groups = [1, 2, 3, 4];
        let r = report_from_predictions(&[1, 1, 1, 1], &labels, &groups, 4).unwrap();
        assert_eq!(r.worst_group_accuracy, 0.0);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn empty_groups_are_flagged_not_zero() {
        let r = report_from_predictions(&[1, 0], &[1, 0], &[1, 3], 4).unwrap();
        assert_eq!(r.empty_groups, [2, 4]);
        assert_eq!(r.group_accuracy[1], None);
        assert_eq!(r.worst_group_accuracy, 1.0);
    }

    #[test]
    fn rejects_bad_group() {
        assert!(report_from_predictions(&[0], &[0], &[5], 4).is_err());
        assert!(report_from_predictions(&[], &[], &[], 4).is_err());
    }
}

//! Word-level tokenizer, miniature transformer classifier, and ERM training.

mod checkpoint;
mod model;
mod train;
mod vocab;

pub use checkpoint::{ModelCheckpoint, ParamBlock};
pub use model::{
    linear_name, linear_shape, ClassifierModel, EncoderConfig, Forward, GradMode, LinearSlot,
    NamedParam, ParamGroup, LAYERNORM_EPS,
};
pub use train::{train_erm, EpochStats, TrainConfig, TrainTrace};
pub use vocab::{split_words, Vocabulary, CLS, MASK, PAD, UNK};

use serde::{Deserialize, Serialize};

use crate::adapter::Blend;
use crate::diffcore::softmax;
use crate::error::{Error, Result};

/// A tokenized input: `[CLS]` followed by the ids of `tokens`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub label: Option<usize>,
}

impl EncodedInput {
    /// Number of real tokens (CLS excluded).
    pub fn n_tokens(&self) -> usize {
        self.ids.len() - 1
    }

    /// Copy with the label removed.
    pub fn unlabeled(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }
}

/// Splits `text`, maps words to ids (unknown → `[UNK]`), prepends `[CLS]`,
/// and truncates to `max_len` ids in total.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<EncodedInput> {
    let mut tokens = split_words(text);
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    if max_len < 2 {
        return Err(Error::InvalidConfig("max_len must be at least 2".into()));
    }
    tokens.truncate(max_len - 1);
    let ids = std::iter::once(CLS)
        .chain(tokens.iter().map(|t| vocab.id(t)))
        .collect();
    Ok(EncodedInput {
        ids,
        tokens,
        label: None,
    })
}

/// Predicted class and class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        let probs = softmax(logits);
        Self {
            class: argmax(&probs),
            probs,
        }
    }
}

pub fn predict(model: &ClassifierModel, x: &EncodedInput, blend: Option<Blend<'_>>) -> Result<Prediction> {
    let (logits, _) = model.forward(x, blend)?;
    Ok(Prediction::from_logits(logits.values()))
}

pub fn predict_batch(
    model: &ClassifierModel,
    inputs: &[EncodedInput],
    blend: Option<Blend<'_>>,
) -> Result<Vec<Prediction>> {
    let seqs: Vec<&[usize]> = inputs.iter().map(|x| x.ids.as_slice()).collect();
    Ok(model
        .logits_batch(&seqs, blend)?
        .iter()
        .map(|l| Prediction::from_logits(l))
        .collect())
}

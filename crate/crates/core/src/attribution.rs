//! Gradient×input token saliency and top-k important-token selection.
//!
//! Positions index into [`EncodedInput::ids`], so position 0 is always the
//! `[CLS]` slot and is never eligible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::Blend;
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::textenc::{argmax, ClassifierModel, EncodedInput, GradMode, MASK, PAD};

pub const DEFAULT_K: usize = 10;

const CHUNK: usize = 32;

/// Saliency per id position; `scores[0]` belongs to `[CLS]` and is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyScores {
    pub scores: Vec<f64>,
    pub eligible: Vec<bool>,
    /// The model's own prediction, used as the loss target.
    pub target: usize,
}

impl SaliencyScores {
    /// Scores of the real tokens only (CLS dropped).
    pub fn token_scores(&self) -> &[f64] {
        &self.scores[1..]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportantTokenSet {
    pub k: usize,
    /// Positions into `ids`, by descending score.
    pub positions: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ImportantTokenSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedVariant {
    pub source: usize,
    pub position: usize,
    pub ids: Vec<usize>,
}

fn eligibility(ids: &[usize]) -> Vec<bool> {
    ids.iter()
        .enumerate()
        .map(|(i, &id)| i > 0 && id != PAD)
        .collect()
}

/// Number of positions eligible for masking.
pub fn n_eligible(x: &EncodedInput) -> usize {
    eligibility(&x.ids).iter().filter(|&&e| e).count()
}

fn saliency_chunk(
    model: &ClassifierModel,
    inputs: &[&EncodedInput],
    blend: Option<Blend<'_>>,
) -> Result<Vec<SaliencyScores>> {
    let seqs: Vec<&[usize]> = inputs.iter().map(|x| x.ids.as_slice()).collect();
    let mut tape = Tape::new();
    let mode = GradMode {
        token_embeddings: true,
        ..GradMode::NONE
    };
    let fwd = model.forward_batch(&mut tape, &seqs, blend, mode)?;
    let targets: Vec<usize> = tape.value(fwd.logits).rows().map(argmax).collect();
    let loss = tape.cross_entropy(fwd.logits, &targets)?;
    // sequences do not interact, so scaling the mean by B yields each
    // example's own gradient
    let loss = tape.scale(loss, inputs.len() as f64)?;
    let grads = tape.backward(loss)?;
    let g = grads
        .get(fwd.token_embeddings)
        .expect("token embeddings require grad");
    let e = tape.value(fwd.token_embeddings);
    let mut out = Vec::with_capacity(inputs.len());
    for (seg, (x, &target)) in fwd.segments.iter().zip(inputs.iter().zip(&targets)) {
        let eligible = eligibility(&x.ids);
        let mut scores = Vec::with_capacity(seg.len);
        for (i, &ok) in eligible.iter().enumerate() {
            if !ok {
                scores.push(0.0);
                continue;
            }
            let row = seg.start + i;
            let s: f64 = g
                .row(row)
                .iter()
                .zip(e.row(row))
                .map(|(gi, ei)| (gi * ei) * (gi * ei))
                .sum::<f64>()
                .sqrt();
            if !s.is_finite() {
                return Err(crate::diffcore::DiffError::NonFinite { op: "saliency" }.into());
            }
            scores.push(s);
        }
        out.push(SaliencyScores {
            scores,
            eligible,
            target,
        });
    }
    Ok(out)
}

/// Saliency under an optional blended adapter. Pure; the model is not
/// modified.
pub fn saliency_batch_with(
    model: &ClassifierModel,
    inputs: &[EncodedInput],
    blend: Option<Blend<'_>>,
) -> Result<Vec<SaliencyScores>> {
    let refs: Vec<&EncodedInput> = inputs.iter().collect();
    let parts: Vec<Result<Vec<SaliencyScores>>> = refs
        .par_chunks(CHUNK)
        .map(|chunk| saliency_chunk(model, chunk, blend))
        .collect();
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Saliency on the base model for many inputs.
pub fn saliency_batch(model: &ClassifierModel, inputs: &[EncodedInput]) -> Result<Vec<SaliencyScores>> {
    saliency_batch_with(model, inputs, None)
}

/// `s_i = ‖∂ℒ/∂e_i ⊙ e_i‖₂` with the loss taken against the model's own
/// prediction.
pub fn saliency(model: &ClassifierModel, x: &EncodedInput) -> Result<SaliencyScores> {
    Ok(saliency_chunk(model, &[x], None)?.remove(0))
}

/// The `k` highest-scoring eligible positions; ties go to the lower
/// position.
pub fn top_k(scores: &SaliencyScores, k: usize) -> ImportantTokenSet {
    let mut idx: Vec<usize> = (0..scores.scores.len())
        .filter(|&i| scores.eligible[i])
        .collect();
    idx.sort_by(|&a, &b| {
        scores.scores[b]
            .total_cmp(&scores.scores[a])
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    ImportantTokenSet {
        k,
        scores: idx.iter().map(|&i| scores.scores[i]).collect(),
        positions: idx,
    }
}

/// One copy of `x` per important position with that position set to
/// `[MASK]`.
pub fn masked_variants(x: &EncodedInput, source: usize, h: &ImportantTokenSet) -> Result<Vec<MaskedVariant>> {
    h.positions
        .iter()
        .map(|&p| {
            if p == 0 || p >= x.ids.len() {
                return Err(Error::Diff(crate::diffcore::DiffError::IndexOutOfRange {
                    index: p,
                    len: x.ids.len(),
                }));
            }
            let mut ids = x.ids.clone();
            ids[p] = MASK;
            Ok(MaskedVariant {
                source,
                position: p,
                ids,
            })
        })
        .collect()
}

/// Important sets for many inputs.
pub fn important_sets(
    model: &ClassifierModel,
    inputs: &[EncodedInput],
    k: usize,
    blend: Option<Blend<'_>>,
) -> Result<Vec<ImportantTokenSet>> {
    Ok(saliency_batch_with(model, inputs, blend)?
        .iter()
        .map(|s| top_k(s, k))
        .collect())
}

/// True when some position in `h` holds one of `shortcut_tokens`.
pub fn hits_shortcut(x: &EncodedInput, h: &ImportantTokenSet, shortcut_tokens: &[String]) -> bool {
    h.positions
        .iter()
        .any(|&p| shortcut_tokens.contains(&x.tokens[p - 1]))
}

/// Fraction of shortcut-bearing inputs whose important set contains a
/// shortcut token. Inputs without any shortcut token are skipped.
pub fn shortcut_recall(
    model: &ClassifierModel,
    inputs: &[EncodedInput],
    shortcut_tokens: &[String],
    k: usize,
) -> Result<f64> {
    let bearing: Vec<EncodedInput> = inputs
        .iter()
        .filter(|x| x.tokens.iter().any(|t| shortcut_tokens.contains(t)))
        .cloned()
        .collect();
    if bearing.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sets = important_sets(model, &bearing, k, None)?;
    let hits = bearing
        .iter()
        .zip(&sets)
        .filter(|(x, h)| hits_shortcut(x, h, shortcut_tokens))
        .count();
    Ok(hits as f64 / bearing.len() as f64)
}

/// One line of the `attribute` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub input_id: usize,
    pub tokens: Vec<String>,
    /// Per-token scores, aligned with `tokens`.
    pub scores: Vec<f64>,
    /// 0-based indices into `tokens`, by descending score.
    pub topk_positions: Vec<usize>,
}

pub fn attribution_records(
    model: &ClassifierModel,
    inputs: &[EncodedInput],
    k: usize,
) -> Result<Vec<AttributionRecord>> {
    let sal = saliency_batch(model, inputs)?;
    Ok(inputs
        .iter()
        .zip(&sal)
        .enumerate()
        .map(|(i, (x, s))| AttributionRecord {
            input_id: i,
            tokens: x.tokens.clone(),
            scores: s.token_scores().to_vec(),
            topk_positions: top_k(s, k).positions.iter().map(|p| p - 1).collect(),
        })
        .collect())
}

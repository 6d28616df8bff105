//! Low-rank adapters over the encoder's linear maps and the scalar blend
//! `W = W_T + α·W_LoRA`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{Provenance, FORMAT_VERSION};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::textenc::{linear_name, linear_shape, ClassifierModel, EncoderConfig, LinearSlot, ParamGroup};

/// One adapted matrix: `W_LoRA = scale · B · A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraPair {
    pub target: String,
    /// `[r × d_in]`
    pub a: Tensor,
    /// `[d_out × r]`
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    rank: usize,
    pairs: Vec<LoraPair>,
    pub calibrated_alpha: Option<f64>,
}

/// An adapter together with the debiasing strength it is applied at.
#[derive(Clone, Copy, Debug)]
pub struct Blend<'a> {
    pub adapter: &'a LoraAdapter,
    pub alpha: f64,
}

impl<'a> Blend<'a> {
    pub fn new(adapter: &'a LoraAdapter, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { adapter, alpha })
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Targets in forward order: every layer's Q, K, V, O, FFN-up, FFN-down.
pub fn target_slots(cfg: &EncoderConfig) -> Vec<(usize, LinearSlot)> {
    (0..cfg.n_layers)
        .flat_map(|l| LinearSlot::ALL.into_iter().map(move |s| (l, s)))
        .collect()
}

/// Default rank for an adaptation set of the given size.
pub fn default_rank(n_examples: usize) -> usize {
    if n_examples <= 800 {
        4
    } else {
        8
    }
}

/// Allocates an adapter for every target and freezes the base model.
///
/// `A` is drawn small and random, `B` starts at zero, so the adapted model
/// initially computes exactly the base function.
pub fn inject(model: &mut ClassifierModel, rank: usize, seed: u64) -> Result<LoraAdapter> {
    let adapter = LoraAdapter::new(model.config(), rank, seed)?;
    model.freeze(ParamGroup::Embeddings);
    model.freeze(ParamGroup::Encoder);
    model.freeze(ParamGroup::Head);
    Ok(adapter)
}

impl LoraAdapter {
    pub fn new(cfg: &EncoderConfig, rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidConfig("LoRA rank must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for (layer, slot) in target_slots(cfg) {
            let (d_out, d_in) = linear_shape(cfg, slot);
            if rank > d_in.min(d_out) {
                return Err(Error::InvalidConfig(format!(
                    "rank {rank} exceeds min(d_in, d_out) = {}",
                    d_in.min(d_out)
                )));
            }
            pairs.push(LoraPair {
                target: linear_name(layer, slot),
                a: Tensor::randn(&[rank, d_in], 1.0 / (d_in as f64).sqrt(), &mut rng),
                b: Tensor::zeros(&[d_out, rank]),
            });
        }
        Ok(Self {
            rank,
            pairs,
            calibrated_alpha: None,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Internal LoRA scale, folded into `W_LoRA`.
    pub fn scale(&self) -> f64 {
        1.0 / self.rank as f64
    }

    pub fn pairs(&self) -> &[LoraPair] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [LoraPair] {
        &mut self.pairs
    }

    pub fn pair(&self, target: &str) -> Option<&LoraPair> {
        self.pairs.iter().find(|p| p.target == target)
    }

    /// Number of trainable adapter values.
    pub fn n_params(&self) -> usize {
        self.pairs.iter().map(|p| p.a.len() + p.b.len()).sum()
    }

    /// `W_LoRA = scale · B · A` for one target.
    pub fn delta(&self, target: &str) -> Result<Tensor> {
        let p = self
            .pair(target)
            .ok_or_else(|| Error::InvalidConfig(format!("no adapter for {target}")))?;
        let (d_out, r) = (p.b.shape()[0], p.b.shape()[1]);
        let d_in = p.a.shape()[1];
        let mut out = vec![0.0; d_out * d_in];
        for i in 0..d_out {
            for k in 0..r {
                let bik = p.b.values()[i * r + k] * self.scale();
                if bik == 0.0 {
                    continue;
                }
                for j in 0..d_in {
                    out[i * d_in + j] += bik * p.a.values()[k * d_in + j];
                }
            }
        }
        Ok(Tensor::new(vec![d_out, d_in], out)?)
    }

    pub(crate) fn check_compatible(&self, cfg: &EncoderConfig) -> Result<()> {
        let slots = target_slots(cfg);
        if slots.len() != self.pairs.len() {
            return Err(Error::InvalidConfig(format!(
                "adapter has {} targets, model needs {}",
                self.pairs.len(),
                slots.len()
            )));
        }
        for ((layer, slot), p) in slots.into_iter().zip(&self.pairs) {
            let (d_out, d_in) = linear_shape(cfg, slot);
            if p.target != linear_name(layer, slot)
                || p.a.shape() != [self.rank, d_in]
                || p.b.shape() != [d_out, self.rank]
            {
                return Err(Error::InvalidConfig(format!(
                    "adapter target {} does not match the encoder",
                    p.target
                )));
            }
        }
        Ok(())
    }
}

/// `W_T + α · W_LoRA` for one target matrix.
pub fn effective_weight(w_t: &Tensor, adapter: &LoraAdapter, target: &str, alpha: f64) -> Result<Tensor> {
    check_alpha(alpha)?;
    let delta = adapter.delta(target)?;
    if delta.shape() != w_t.shape() {
        return Err(Error::InvalidConfig(format!(
            "{target}: adapter delta {:?} vs weight {:?}",
            delta.shape(),
            w_t.shape()
        )));
    }
    if alpha == 0.0 {
        return Ok(w_t.clone());
    }
    let vals = w_t
        .values()
        .iter()
        .zip(delta.values())
        .map(|(w, d)| w + alpha * d)
        .collect();
    Ok(Tensor::new(w_t.shape().to_vec(), vals)?)
}

/// Effective weight of every target of `model` under `adapter` at `alpha`.
pub fn effective_weights(
    model: &ClassifierModel,
    adapter: &LoraAdapter,
    alpha: f64,
) -> Result<Vec<(String, Tensor)>> {
    target_slots(model.config())
        .into_iter()
        .map(|(layer, slot)| {
            let name = linear_name(layer, slot);
            let w = effective_weight(model.linear_weight(layer, slot), adapter, &name, alpha)?;
            Ok((name, w))
        })
        .collect()
}

/// On-disk adapter document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdapterCheckpoint {
    pub format_version: u32,
    pub provenance: Provenance,
    pub rank: usize,
    pub targets: Vec<String>,
    pub pairs: Vec<LoraPair>,
    pub calibrated_alpha: Option<f64>,
}

impl AdapterCheckpoint {
    pub fn from_adapter(adapter: &LoraAdapter, provenance: Provenance) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            provenance,
            rank: adapter.rank,
            targets: adapter.pairs.iter().map(|p| p.target.clone()).collect(),
            pairs: adapter.pairs.clone(),
            calibrated_alpha: adapter.calibrated_alpha,
        }
    }

    pub fn into_adapter(self, cfg: &EncoderConfig) -> Result<LoraAdapter> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let names: Vec<&String> = self.pairs.iter().map(|p| &p.target).collect();
        if names.len() != self.targets.len() || names.iter().zip(&self.targets).any(|(a, b)| *a != b) {
            return Err(Error::Checkpoint("adapter target list does not match its blocks".into()));
        }
        if let Some(a) = self.calibrated_alpha {
            check_alpha(a)?;
        }
        let adapter = LoraAdapter {
            rank: self.rank,
            pairs: self.pairs,
            calibrated_alpha: self.calibrated_alpha,
        };
        adapter.check_compatible(cfg)?;
        Ok(adapter)
    }
}

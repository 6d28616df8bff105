use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{CLS, MASK, PAD};
use super::EncodedInput;
use crate::adapter::Blend;
use crate::diffcore::{Segment, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults for a given vocabulary and label count.
    pub fn desk(vocab_size: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
            vocab_size,
            n_classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.d_ff,
            self.max_len,
            self.n_classes,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("encoder dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= MASK + 1 {
            return Err(Error::InvalidConfig("vocabulary too small".into()));
        }
        if self.max_len < 2 {
            return Err(Error::InvalidConfig("max_len must leave room for [CLS] and a token".into()));
        }
        Ok(())
    }
}

/// Coarse parameter groups used for freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embeddings,
    Encoder,
    Head,
}

/// The six linear maps of one encoder layer that can carry an adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearSlot {
    Query,
    Key,
    Value,
    Output,
    FfnUp,
    FfnDown,
}

impl LinearSlot {
    pub const ALL: [LinearSlot; 6] = [
        LinearSlot::Query,
        LinearSlot::Key,
        LinearSlot::Value,
        LinearSlot::Output,
        LinearSlot::FfnUp,
        LinearSlot::FfnDown,
    ];

    fn stem(self) -> &'static str {
        match self {
            LinearSlot::Query => "attn.q",
            LinearSlot::Key => "attn.k",
            LinearSlot::Value => "attn.v",
            LinearSlot::Output => "attn.o",
            LinearSlot::FfnUp => "ffn.up",
            LinearSlot::FfnDown => "ffn.down",
        }
    }
}

/// Name of the linear map `slot` in layer `layer`, e.g. `layers.0.attn.q`.
pub fn linear_name(layer: usize, slot: LinearSlot) -> String {
    format!("layers.{layer}.{}", slot.stem())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Indices of each parameter inside [`ClassifierModel::params`].
#[derive(Clone, Debug)]
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerLayout>,
    final_gamma: usize,
    final_beta: usize,
    head_w: usize,
    head_b: usize,
}

#[derive(Clone, Debug)]
struct LayerLayout {
    ln1: (usize, usize),
    /// (weight, bias) per [`LinearSlot::ALL`] entry.
    linears: [(usize, usize); 6],
    ln2: (usize, usize),
}

/// Miniature pre-norm transformer encoder with a linear classification head
/// read from the `[CLS]` position.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    config: EncoderConfig,
    params: Vec<NamedParam>,
    layout: Layout,
    frozen: Vec<ParamGroup>,
}

impl PartialEq for ClassifierModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Expected shapes of every parameter, in storage order.
pub(crate) fn param_specs(cfg: &EncoderConfig) -> Vec<(String, ParamGroup, Vec<usize>)> {
    let d = cfg.d_model;
    let mut specs = vec![
        ("tok_emb".to_string(), ParamGroup::Embeddings, vec![cfg.vocab_size, d]),
        ("pos_emb".to_string(), ParamGroup::Embeddings, vec![cfg.max_len, d]),
    ];
    for l in 0..cfg.n_layers {
        specs.push((format!("layers.{l}.ln1.gamma"), ParamGroup::Encoder, vec![d]));
        specs.push((format!("layers.{l}.ln1.beta"), ParamGroup::Encoder, vec![d]));
        for slot in LinearSlot::ALL {
            let (d_out, d_in) = linear_shape(cfg, slot);
            let stem = linear_name(l, slot);
            specs.push((format!("{stem}.weight"), ParamGroup::Encoder, vec![d_out, d_in]));
            specs.push((format!("{stem}.bias"), ParamGroup::Encoder, vec![d_out]));
        }
        specs.push((format!("layers.{l}.ln2.gamma"), ParamGroup::Encoder, vec![d]));
        specs.push((format!("layers.{l}.ln2.beta"), ParamGroup::Encoder, vec![d]));
    }
    specs.push(("final_ln.gamma".to_string(), ParamGroup::Encoder, vec![d]));
    specs.push(("final_ln.beta".to_string(), ParamGroup::Encoder, vec![d]));
    specs.push(("head.weight".to_string(), ParamGroup::Head, vec![cfg.n_classes, d]));
    specs.push(("head.bias".to_string(), ParamGroup::Head, vec![cfg.n_classes]));
    specs
}

/// `(d_out, d_in)` of a linear slot.
pub fn linear_shape(cfg: &EncoderConfig, slot: LinearSlot) -> (usize, usize) {
    match slot {
        LinearSlot::FfnUp => (cfg.d_ff, cfg.d_model),
        LinearSlot::FfnDown => (cfg.d_model, cfg.d_ff),
        _ => (cfg.d_model, cfg.d_model),
    }
}

fn build_layout(cfg: &EncoderConfig) -> Layout {
    // Storage order mirrors `param_specs`.
    let mut next = 0;
    let mut take = || {
        next += 1;
        next - 1
    };
    let tok_emb = take();
    let pos_emb = take();
    let layers = (0..cfg.n_layers)
        .map(|_| {
            let ln1 = (take(), take());
            let linears = std::array::from_fn(|_| (take(), take()));
            let ln2 = (take(), take());
            LayerLayout { ln1, linears, ln2 }
        })
        .collect();
    Layout {
        tok_emb,
        pos_emb,
        layers,
        final_gamma: take(),
        final_beta: take(),
        head_w: take(),
        head_b: take(),
    }
}

/// Per-call gradient requirements for [`ClassifierModel::forward_batch`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GradMode {
    /// All base parameters are trainable leaves.
    pub base: bool,
    /// The gathered token embeddings are a trainable leaf.
    pub token_embeddings: bool,
    /// Adapter factors are trainable leaves.
    pub adapter: bool,
}

impl GradMode {
    pub const NONE: GradMode = GradMode {
        base: false,
        token_embeddings: false,
        adapter: false,
    };
}

/// Handles into a tape produced by one batched forward pass.
#[derive(Debug)]
pub struct Forward {
    /// `[B × C]`
    pub logits: Var,
    /// `[B × d_model]` final-layer `[CLS]` representations.
    pub cls: Var,
    /// `[N × d_model]` token embeddings of all packed rows (CLS included).
    pub token_embeddings: Var,
    /// Base parameter leaves, aligned with [`ClassifierModel::params`].
    pub params: Vec<Var>,
    /// `(A, B)` leaves per adapter target when an adapter was applied.
    pub adapter: Vec<(Var, Var)>,
    pub segments: Vec<Segment>,
}

impl ClassifierModel {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, group, shape)| {
                let tensor = if name.ends_with(".gamma") {
                    Tensor::filled(&shape, 1.0)
                } else if name.ends_with(".bias") || name.ends_with(".beta") {
                    Tensor::zeros(&shape)
                } else if name == "tok_emb" {
                    let mut t = Tensor::randn(&shape, 0.5, &mut rng);
                    let d = shape[1];
                    // [PAD] and [MASK] start as empty slots: a masked token
                    // contributes only its position.
                    for id in [PAD, MASK] {
                        t.values_mut()[id * d..(id + 1) * d].fill(0.0);
                    }
                    t
                } else if name == "pos_emb" {
                    Tensor::randn(&shape, 0.1, &mut rng)
                } else {
                    Tensor::randn(&shape, 1.0 / (shape[1] as f64).sqrt(), &mut rng)
                };
                NamedParam {
                    name,
                    group,
                    tensor,
                }
            })
            .collect();
        let layout = build_layout(&config);
        Ok(Self {
            config,
            params,
            layout,
            frozen: Vec::new(),
        })
    }

    /// Rebuilds a model from named tensors, validating every shape.
    pub fn from_params(config: EncoderConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        let params = specs
            .into_iter()
            .zip(tensors)
            .map(|((name, group, shape), (got_name, tensor))| {
                if name != got_name {
                    return Err(Error::Checkpoint(format!(
                        "expected parameter {name}, found {got_name}"
                    )));
                }
                if tensor.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name}: shape {:?}, expected {shape:?}",
                        tensor.shape()
                    )));
                }
                if !tensor.is_finite() {
                    return Err(Error::Checkpoint(format!("parameter {name} is not finite")));
                }
                Ok(NamedParam {
                    name,
                    group,
                    tensor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = build_layout(&config);
        Ok(Self {
            config,
            params,
            layout,
            frozen: Vec::new(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [NamedParam] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }

    /// Weight matrix of a linear slot.
    pub fn linear_weight(&self, layer: usize, slot: LinearSlot) -> &Tensor {
        let idx = LinearSlot::ALL.iter().position(|s| *s == slot).expect("slot");
        &self.params[self.layout.layers[layer].linears[idx].0].tensor
    }

    pub fn freeze(&mut self, group: ParamGroup) {
        if !self.frozen.contains(&group) {
            self.frozen.push(group);
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() || ids[0] != CLS {
            return Err(Error::InvalidConfig("encoded input must start with [CLS]".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::InvalidConfig(format!(
                "sequence of {} exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Packs the sequences into one `[N × d]` block and runs the encoder.
    ///
    /// With `blend` set and a non-zero strength, every adapted linear map uses
    /// `W_T + α·W_LoRA`; at zero strength the base weights are used directly.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        seqs: &[&[usize]],
        blend: Option<Blend<'_>>,
        mode: GradMode,
    ) -> Result<Forward> {
        if seqs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for ids in seqs {
            self.check_ids(ids)?;
        }
        let cfg = &self.config;
        let lay = &self.layout;

        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if mode.base {
                    tape.param(p.tensor.clone())
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();

        let active = blend.filter(|b| b.alpha != 0.0);
        let mut adapter_vars = Vec::new();
        if let Some(b) = active {
            b.adapter.check_compatible(cfg)?;
            for pair in b.adapter.pairs() {
                let (a, bm) = if mode.adapter {
                    (tape.param(pair.a.clone()), tape.param(pair.b.clone()))
                } else {
                    (tape.constant(pair.a.clone()), tape.constant(pair.b.clone()))
                };
                adapter_vars.push((a, bm));
            }
        }

        let mut segments = Vec::with_capacity(seqs.len());
        let mut flat_ids = Vec::new();
        let mut positions = Vec::new();
        for ids in seqs {
            segments.push(Segment {
                start: flat_ids.len(),
                len: ids.len(),
            });
            flat_ids.extend_from_slice(ids);
            positions.extend(0..ids.len());
        }

        let token_embeddings = if mode.base {
            tape.embedding_gather(params[lay.tok_emb], &flat_ids)?
        } else {
            let table = &self.params[lay.tok_emb].tensor;
            let d = cfg.d_model;
            let mut vals = Vec::with_capacity(flat_ids.len() * d);
            for &id in &flat_ids {
                vals.extend_from_slice(table.row(id));
            }
            let t = Tensor::new(vec![flat_ids.len(), d], vals)?;
            if mode.token_embeddings {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        let pos = tape.embedding_gather(params[lay.pos_emb], &positions)?;
        let mut x = tape.add(token_embeddings, pos)?;

        for (l, layer) in lay.layers.iter().enumerate() {
            let weight = |tape: &mut Tape, slot_idx: usize| -> Result<Var> {
                let w = params[layer.linears[slot_idx].0];
                match active {
                    None => Ok(w),
                    Some(b) => {
                        let (a, bm) = adapter_vars[l * LinearSlot::ALL.len() + slot_idx];
                        let delta = tape.matmul(bm, a)?;
                        let delta = tape.scale(delta, b.alpha * b.adapter.scale())?;
                        Ok(tape.add(w, delta)?)
                    }
                }
            };
            let bias = |slot_idx: usize| Some(params[layer.linears[slot_idx].1]);

            let h = tape.layernorm(x, params[layer.ln1.0], params[layer.ln1.1], LAYERNORM_EPS)?;
            let wq = weight(tape, 0)?;
            let q = tape.linear(h, wq, bias(0))?;
            let wk = weight(tape, 1)?;
            let k = tape.linear(h, wk, bias(1))?;
            let wv = weight(tape, 2)?;
            let v = tape.linear(h, wv, bias(2))?;
            let att = tape.attention(q, k, v, &segments, cfg.n_heads)?;
            let wo = weight(tape, 3)?;
            let o = tape.linear(att, wo, bias(3))?;
            x = tape.add(x, o)?;

            let h = tape.layernorm(x, params[layer.ln2.0], params[layer.ln2.1], LAYERNORM_EPS)?;
            let w1 = weight(tape, 4)?;
            let f = tape.linear(h, w1, bias(4))?;
            let f = tape.gelu(f)?;
            let w2 = weight(tape, 5)?;
            let f = tape.linear(f, w2, bias(5))?;
            x = tape.add(x, f)?;
        }

        let z = tape.layernorm(
            x,
            params[lay.final_gamma],
            params[lay.final_beta],
            LAYERNORM_EPS,
        )?;
        let cls_rows: Vec<usize> = segments.iter().map(|s| s.start).collect();
        let cls = tape.embedding_gather(z, &cls_rows)?;
        let logits = tape.linear(cls, params[lay.head_w], Some(params[lay.head_b]))?;
        Ok(Forward {
            logits,
            cls,
            token_embeddings,
            params,
            adapter: adapter_vars,
            segments,
        })
    }

    /// Logits `[C]` and `[CLS]` representation `[d_model]` for one input.
    pub fn forward(&self, x: &EncodedInput, blend: Option<Blend<'_>>) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let out = self.forward_batch(&mut tape, &[&x.ids], blend, GradMode::NONE)?;
        let logits = Tensor::vector(tape.value(out.logits).values().to_vec());
        let cls = Tensor::vector(tape.value(out.cls).values().to_vec());
        Ok((logits, cls))
    }

    /// Logit rows for many inputs, evaluated in chunks.
    pub fn logits_batch(
        &self,
        inputs: &[&[usize]],
        blend: Option<Blend<'_>>,
    ) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(CHUNK) {
            let mut tape = Tape::new();
            let f = self.forward_batch(&mut tape, chunk, blend, GradMode::NONE)?;
            out.extend(tape.value(f.logits).rows().map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

//! Masked contrastive learning of a LoRA adapter on unlabeled inputs.
//!
//! Each input `x_i` (the anchor) is paired with copies in which one of its
//! important tokens is replaced by `[MASK]` (the positives). The objective
//! is a two-way InfoNCE: each positive must pick out its own anchor among
//! all anchors, and each anchor must pick out its own positive among the
//! positives sharing the same mask index.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Blend, LoraAdapter};
use crate::attribution::{important_sets, masked_variants, ImportantTokenSet, DEFAULT_K};
use crate::diffcore::{DiffError, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::textenc::{ClassifierModel, EncodedInput, GradMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskClConfig {
    pub temperature: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for MaskClConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            lr: 1e-4,
            epochs: 1,
            batch_size: 32,
            accumulation_steps: 1,
            k: DEFAULT_K,
            seed: 0,
        }
    }
}

impl MaskClConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        if self.batch_size == 0 || self.accumulation_steps == 0 || self.k == 0 {
            return Err(Error::InvalidConfig(
                "batch size, accumulation steps and k must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which anchor and which mask index a positive belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOwner {
    pub anchor: usize,
    /// Rank of the masked position within the anchor's important set.
    pub mask_index: usize,
}

/// Token ids of every anchor and positive, before embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPlan {
    pub anchors: Vec<Vec<usize>>,
    pub positives: Vec<Vec<usize>>,
    pub owners: Vec<PairOwner>,
}

impl PairPlan {
    pub fn n_pairs(&self) -> usize {
        self.positives.len()
    }

    /// Subset of the plan restricted to the given anchors, re-indexed.
    pub fn select(&self, anchors: &[usize]) -> PairPlan {
        let mut out = PairPlan {
            anchors: Vec::with_capacity(anchors.len()),
            positives: Vec::new(),
            owners: Vec::new(),
        };
        for (new_i, &i) in anchors.iter().enumerate() {
            out.anchors.push(self.anchors[i].clone());
            for (p, o) in self.positives.iter().zip(&self.owners) {
                if o.anchor == i {
                    out.positives.push(p.clone());
                    out.owners.push(PairOwner {
                        anchor: new_i,
                        mask_index: o.mask_index,
                    });
                }
            }
        }
        out
    }
}

/// Builds the pair plan from precomputed important sets.
pub fn plan_pairs(batch: &[EncodedInput], sets: &[ImportantTokenSet]) -> Result<PairPlan> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut plan = PairPlan {
        anchors: Vec::with_capacity(batch.len()),
        positives: Vec::new(),
        owners: Vec::new(),
    };
    for (i, (x, h)) in batch.iter().zip(sets).enumerate() {
        if h.is_empty() {
            return Err(Error::NoEligibleTokens { index: i });
        }
        plan.anchors.push(x.ids.clone());
        for (j, v) in masked_variants(x, i, h)?.into_iter().enumerate() {
            plan.positives.push(v.ids);
            plan.owners.push(PairOwner {
                anchor: i,
                mask_index: j,
            });
        }
    }
    Ok(plan)
}

/// Normalized anchor and positive embeddings living on a tape.
#[derive(Debug)]
pub struct PairBatch {
    /// `[B × d]`, unit rows.
    pub anchors: Var,
    /// `[P × d]`, unit rows.
    pub positives: Var,
    pub owners: Vec<PairOwner>,
    /// Adapter leaves `(A, B)` per target, aligned with the adapter's pairs.
    pub adapter: Vec<(Var, Var)>,
}

/// Embeds a plan with the adapter at full strength; adapter factors are
/// trainable leaves on `tape`.
pub fn embed_pairs(
    tape: &mut Tape,
    model: &ClassifierModel,
    adapter: &LoraAdapter,
    plan: &PairPlan,
) -> Result<PairBatch> {
    let mut seqs: Vec<&[usize]> = plan.anchors.iter().map(Vec::as_slice).collect();
    seqs.extend(plan.positives.iter().map(Vec::as_slice));
    let mode = GradMode {
        adapter: true,
        ..GradMode::NONE
    };
    let fwd = model.forward_batch(tape, &seqs, Some(Blend::new(adapter, 1.0)?), mode)?;
    let b = plan.anchors.len();
    let anchor_rows: Vec<usize> = (0..b).collect();
    let pos_rows: Vec<usize> = (b..seqs.len()).collect();
    let anchors = tape.embedding_gather(fwd.cls, &anchor_rows)?;
    let anchors = tape.l2_normalize(anchors)?;
    let positives = tape.embedding_gather(fwd.cls, &pos_rows)?;
    let positives = tape.l2_normalize(positives)?;
    Ok(PairBatch {
        anchors,
        positives,
        owners: plan.owners.clone(),
        adapter: fwd.adapter,
    })
}

/// Computes important sets on the frozen base model, then embeds the pairs.
pub fn build_pairs(
    tape: &mut Tape,
    model: &ClassifierModel,
    adapter: &LoraAdapter,
    batch: &[EncodedInput],
    k: usize,
) -> Result<PairBatch> {
    let sets = important_sets(model, batch, k, None)?;
    let plan = plan_pairs(batch, &sets)?;
    embed_pairs(tape, model, adapter, &plan)
}

/// Bidirectional InfoNCE over the pairs, normalized by twice the pair count.
pub fn maskcl_loss(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    owners: &[PairOwner],
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be > 0".into()));
    }
    let n_pairs = owners.len();
    if n_pairs == 0 {
        return Err(DiffError::InvalidArgument("need at least one pair").into());
    }
    if tape.value(positives).n_rows() != n_pairs {
        return Err(DiffError::InvalidArgument("one positive row per pair owner").into());
    }
    let inv_tau = 1.0 / temperature;

    // positive → anchors
    let at = tape.transpose(anchors)?;
    let sim = tape.matmul(positives, at)?;
    let sim = tape.scale(sim, inv_tau)?;
    let targets: Vec<usize> = owners.iter().map(|o| o.anchor).collect();
    let ce = tape.cross_entropy(sim, &targets)?;
    let mut total = tape.scale(ce, n_pairs as f64)?;

    // anchor → positives sharing its mask index
    let max_j = owners.iter().map(|o| o.mask_index).max().unwrap_or(0);
    for j in 0..=max_j {
        let rows: Vec<usize> = (0..n_pairs).filter(|&r| owners[r].mask_index == j).collect();
        if rows.is_empty() {
            continue;
        }
        let owner_rows: Vec<usize> = rows.iter().map(|&r| owners[r].anchor).collect();
        let pj = tape.embedding_gather(positives, &rows)?;
        let aj = tape.embedding_gather(anchors, &owner_rows)?;
        let pjt = tape.transpose(pj)?;
        let sim = tape.matmul(aj, pjt)?;
        let sim = tape.scale(sim, inv_tau)?;
        let diag: Vec<usize> = (0..rows.len()).collect();
        let ce = tape.cross_entropy(sim, &diag)?;
        let ce = tape.scale(ce, rows.len() as f64)?;
        total = tape.add(total, ce)?;
    }
    Ok(tape.scale(total, 1.0 / (2.0 * n_pairs as f64))?)
}

/// Loss value of the current adapter on a plan.
pub fn evaluate_loss(
    model: &ClassifierModel,
    adapter: &LoraAdapter,
    plan: &PairPlan,
    temperature: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pb = embed_pairs(&mut tape, model, adapter, plan)?;
    let loss = maskcl_loss(&mut tape, pb.anchors, pb.positives, &pb.owners, temperature)?;
    Ok(tape.value(loss).item())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptTrace {
    /// Loss of every optimizer step's accumulated minibatches.
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub n_pairs: usize,
}

/// Fits the adapter by minimizing the contrastive loss on `inputs`.
///
/// Important sets come from the frozen base model and are computed once.
/// Labels are stripped before use.
pub fn adapt(
    model: &ClassifierModel,
    adapter: LoraAdapter,
    inputs: &[EncodedInput],
    cfg: &MaskClConfig,
) -> Result<(LoraAdapter, AdaptTrace)> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let unlabeled: Vec<EncodedInput> = inputs.iter().map(EncodedInput::unlabeled).collect();
    let sets = important_sets(model, &unlabeled, cfg.k, None)?;
    let plan = plan_pairs(&unlabeled, &sets)?;
    let mut adapter = adapter;
    let mut trace = AdaptTrace {
        n_pairs: plan.n_pairs(),
        ..AdaptTrace::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..unlabeled.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0;
        for group in batches.chunks(cfg.accumulation_steps) {
            let mut acc: Option<Vec<Tensor>> = None;
            let mut step_loss = 0.0;
            let group_pairs: usize = group
                .iter()
                .map(|b| b.iter().map(|&i| sets[i].len()).sum::<usize>())
                .sum();
            for batch in group {
                let sub = plan.select(batch);
                let mut tape = Tape::new();
                let pb = embed_pairs(&mut tape, model, &adapter, &sub)?;
                let loss = maskcl_loss(&mut tape, pb.anchors, pb.positives, &pb.owners, cfg.temperature)?;
                let value = tape.value(loss).item();
                // weight each minibatch by its share of the accumulated pairs
                let weight = sub.n_pairs() as f64 / group_pairs as f64;
                step_loss += value * weight;
                epoch_loss += value * sub.n_pairs() as f64;
                epoch_pairs += sub.n_pairs();
                let mut grads = tape.backward(loss)?;
                let mut flat = Vec::with_capacity(pb.adapter.len() * 2);
                for &(a, b) in &pb.adapter {
                    let mut ga = grads.take(a).expect("adapter leaf has a gradient");
                    let mut gb = grads.take(b).expect("adapter leaf has a gradient");
                    ga.values_mut().iter_mut().for_each(|g| *g *= weight);
                    gb.values_mut().iter_mut().for_each(|g| *g *= weight);
                    flat.push(ga);
                    flat.push(gb);
                }
                match acc.as_mut() {
                    None => acc = Some(flat),
                    Some(acc) => {
                        for (s, g) in acc.iter_mut().zip(&flat) {
                            s.add_assign(g);
                        }
                    }
                }
            }
            let grads = acc.expect("non-empty accumulation group");
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params: Vec<&mut Tensor> = adapter
                .pairs_mut()
                .iter_mut()
                .flat_map(|p| [&mut p.a, &mut p.b])
                .collect();
            adam.step(&mut params, &grad_refs);
            trace.step_losses.push(step_loss);
        }
        let mean = epoch_loss / epoch_pairs as f64;
        log::info!("maskcl epoch {epoch}: loss {mean:.4}");
        trace.epoch_losses.push(mean);
    }
    Ok((adapter, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(tape: &mut Tape, rows: &[&[f64]]) -> Var {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let t = Tensor::from_rows(&rows).unwrap();
        let v = tape.constant(t);
        tape.l2_normalize(v).unwrap()
    }

    fn owners(spec: &[(usize, usize)]) -> Vec<PairOwner> {
        spec.iter()
            .map(|&(anchor, mask_index)| PairOwner { anchor, mask_index })
            .collect()
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let mut tape = Tape::new();
        let a = unit_rows(&mut tape, &[&[0.3, 0.4]]);
        let p = unit_rows(&mut tape, &[&[-1.0, 2.0]]);
        let l = maskcl_loss(&mut tape, a, p, &owners(&[(0, 0)]), 0.1).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn identical_embeddings_give_log_b() {
        for b in [2usize, 3, 7] {
            let mut tape = Tape::new();
            let rows: Vec<&[f64]> = (0..b).map(|_| &[0.6, 0.8][..]).collect();
            let a = unit_rows(&mut tape, &rows);
            let p = unit_rows(&mut tape, &rows);
            let own: Vec<(usize, usize)> = (0..b).map(|i| (i, 0)).collect();
            let l = maskcl_loss(&mut tape, a, p, &owners(&own), 0.1).unwrap();
            assert!((tape.value(l).item() - (b as f64).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut tape = Tape::new();
        let a = unit_rows(&mut tape, &[&[1.0, 0.0]]);
        let p = unit_rows(&mut tape, &[&[1.0, 0.0]]);
        assert!(maskcl_loss(&mut tape, a, p, &owners(&[(0, 0)]), 0.0).is_err());
    }

    #[test]
    fn plan_selection_reindexes() {
        let plan = PairPlan {
            anchors: vec![vec![1, 5], vec![1, 6, 7]],
            positives: vec![vec![1, 2], vec![1, 2, 7], vec![1, 6, 2]],
            owners: owners(&[(0, 0), (1, 0), (1, 1)]),
        };
        let sub = plan.select(&[1]);
        assert_eq!(sub.anchors, vec![vec![1, 6, 7]]);
        assert_eq!(sub.owners, owners(&[(0, 0), (0, 1)]));
    }
}

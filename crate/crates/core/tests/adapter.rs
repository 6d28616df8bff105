mod common;

use common::*;
use guardrail::adapter::{self, effective_weight, AdapterCheckpoint, Blend};
use guardrail::artifact::Provenance;
use guardrail::diffcore::Tensor;
use guardrail::textenc::{linear_name, predict_batch, ClassifierModel, EncoderConfig};
use proptest::prelude::*;

fn frobenius_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Rank by Gaussian elimination with partial pivoting.
fn numeric_rank(t: &Tensor, tol: f64) -> usize {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut m: Vec<Vec<f64>> = (0..rows).map(|r| t.values()[r * cols..(r + 1) * cols].to_vec()).collect();
    let mut rank = 0;
    for c in 0..cols {
        let Some(piv) = (rank..rows).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())) else {
            break;
        };
        if m[piv][c].abs() <= tol {
            continue;
        }
        m.swap(rank, piv);
        for r in 0..rows {
            if r != rank {
                let f = m[r][c] / m[rank][c];
                for k in c..cols {
                    m[r][k] -= f * m[rank][k];
                }
            }
        }
        rank += 1;
    }
    rank
}

#[test]
fn zero_alpha_forward_is_bit_identical() {
    let corpus = cue_corpus(30, 3, 1);
    let vocab = vocab_for(&corpus);
    let data = encode(&corpus, &vocab, 16);
    let model = ClassifierModel::new(small_config(vocab.len(), 3, 1)).unwrap();
    let lora = active_adapter(&model, 3, 1, 1.0);
    for x in &data {
        let base = model.forward(x, None).unwrap();
        let zero = model.forward(x, Some(Blend::new(&lora, 0.0).unwrap())).unwrap();
        assert_eq!(base, zero);
    }
}

#[test]
fn fresh_adapter_changes_nothing_at_any_alpha() {
    let corpus = cue_corpus(20, 2, 2);
    let vocab = vocab_for(&corpus);
    let data = encode(&corpus, &vocab, 16);
    let mut model = ClassifierModel::new(small_config(vocab.len(), 2, 2)).unwrap();
    let lora = adapter::inject(&mut model, 4, 2).unwrap();
    let base = predict_batch(&model, &data, None).unwrap();
    let full = predict_batch(&model, &data, Some(Blend::new(&lora, 1.0).unwrap())).unwrap();
    assert_eq!(base, full);
}

#[test]
fn logits_are_smooth_in_alpha() {
    // Central differences at two step sizes agree when the blend is
    // differentiable in α.
    let corpus = cue_corpus(8, 2, 3);
    let vocab = vocab_for(&corpus);
    let data = encode(&corpus, &vocab, 16);
    let model = ClassifierModel::new(small_config(vocab.len(), 2, 3)).unwrap();
    let lora = active_adapter(&model, 2, 3, 0.5);
    let logit = |a: f64| model.forward(&data[0], Some(Blend::new(&lora, a).unwrap())).unwrap().0;
    let d = |h: f64| {
        let (p, m) = (logit(0.5 + h), logit(0.5 - h));
        p.values().iter().zip(m.values()).map(|(x, y)| (x - y) / (2.0 * h)).collect::<Vec<_>>()
    };
    let (coarse, fine) = (d(1e-3), d(1e-5));
    for (c, f) in coarse.iter().zip(&fine) {
        assert!((c - f).abs() <= 1e-4 * (1.0 + f.abs()), "{c} vs {f}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = ClassifierModel::new(small_config(12, 2, 4)).unwrap();
    let mut lora = active_adapter(&model, 2, 4, 1.0);
    lora.calibrated_alpha = Some(0.3);
    let ckpt = AdapterCheckpoint::from_adapter(&lora, Provenance::default());
    let json = serde_json::to_string(&ckpt).unwrap();
    let back = serde_json::from_str::<AdapterCheckpoint>(&json)
        .unwrap()
        .into_adapter(model.config())
        .unwrap();
    assert_eq!(back, lora);
    let other = ClassifierModel::new(EncoderConfig {
        d_model: 8,
        ..small_config(12, 2, 4)
    })
    .unwrap();
    let ckpt = AdapterCheckpoint::from_adapter(&lora, Provenance::default());
    assert!(ckpt.into_adapter(other.config()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn blend_distance_is_linear_in_alpha(seed in 0u64..500, rank in 1usize..6, alpha in 0.0f64..=1.0) {
        let model = ClassifierModel::new(small_config(12, 2, seed)).unwrap();
        let lora = active_adapter(&model, rank, seed, 1.0);
        for (layer, slot) in adapter::target_slots(model.config()) {
            let name = linear_name(layer, slot);
            let w_t = model.linear_weight(layer, slot);
            let at = frobenius_diff(&effective_weight(w_t, &lora, &name, alpha).unwrap(), w_t);
            let full = frobenius_diff(&effective_weight(w_t, &lora, &name, 1.0).unwrap(), w_t);
            prop_assert!((at - alpha * full).abs() <= 1e-12);
        }
    }

    #[test]
    fn delta_rank_is_bounded_by_r(seed in 0u64..500, rank in 1usize..5) {
        let model = ClassifierModel::new(small_config(12, 2, seed)).unwrap();
        let lora = active_adapter(&model, rank, seed, 1.0);
        for p in lora.pairs() {
            let delta = lora.delta(&p.target).unwrap();
            prop_assert!(numeric_rank(&delta, 1e-9) <= rank);
        }
    }
}

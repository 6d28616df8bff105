#![allow(dead_code)]

use guardrail::adapter::LoraAdapter;
use guardrail::diffcore::Tensor;
use guardrail::textenc::{tokenize, ClassifierModel, EncodedInput, EncoderConfig, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FILLER: [&str; 8] = ["the", "a", "table", "river", "green", "slowly", "window", "under"];

pub fn small_config(vocab_size: usize, n_classes: usize, seed: u64) -> EncoderConfig {
    EncoderConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        max_len: 16,
        vocab_size,
        n_classes,
        seed,
    }
}

/// Class `c` texts carry the cue word `cue{c}` somewhere among filler.
pub fn cue_corpus(n: usize, n_classes: usize, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % n_classes;
            let len = rng.random_range(3..8);
            let mut words: Vec<String> = (0..len)
                .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string())
                .collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, format!("cue{label}"));
            (words.join(" "), label)
        })
        .collect()
}

pub fn vocab_for(corpus: &[(String, usize)]) -> Vocabulary {
    Vocabulary::from_texts(corpus.iter().map(|(t, _)| t.as_str()))
}

pub fn encode(corpus: &[(String, usize)], vocab: &Vocabulary, max_len: usize) -> Vec<EncodedInput> {
    corpus
        .iter()
        .map(|(t, y)| {
            let mut x = tokenize(t, vocab, max_len).unwrap();
            x.label = Some(*y);
            x
        })
        .collect()
}

/// Adapter with non-zero `B` factors so blending changes the weights.
pub fn active_adapter(model: &ClassifierModel, rank: usize, seed: u64, scale: f64) -> LoraAdapter {
    let mut lora = LoraAdapter::new(model.config(), rank, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xADA);
    for p in lora.pairs_mut() {
        p.b = Tensor::randn(p.b.shape(), scale, &mut rng);
    }
    lora
}

pub fn accuracy(model: &ClassifierModel, inputs: &[EncodedInput]) -> f64 {
    let preds = guardrail::textenc::predict_batch(model, inputs, None).unwrap();
    let hits = preds
        .iter()
        .zip(inputs)
        .filter(|(p, x)| Some(p.class) == x.label)
        .count();
    hits as f64 / inputs.len() as f64
}

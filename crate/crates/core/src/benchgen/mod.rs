//! Synthetic corpora with controlled token shortcuts.
//!
//! Examples carry a label, a shortcut-presence flag and a group id over the
//! label × presence grid. Groups enumerate labels from the highest class id
//! down: label `C−1` owns groups 1 (no shortcut) and 2 (shortcut), label
//! `C−2` owns 3 and 4, and so on. In the binary testbed this puts the
//! shortcut-favoured positive class first, so group 4 is "negative with
//! shortcut".

mod shortcut;
pub mod words;

pub use shortcut::{ShortcutRegistry, ShortcutStrategy, SingleToken, Synonym, HONESTY_SYNONYMS};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textenc::split_words;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("invalid shortcut: {0}")]
    InvalidShortcut(String),
    #[error("shortcut strength {0} outside [0, 1]")]
    StrengthOutOfRange(f64),
    #[error("dataset already contains shortcut phrases")]
    NotShortcutFree,
    #[error("group {group} needs {needed} examples, only {available} available")]
    InsufficientGroup {
        group: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0}")]
    Unsupported(String),
}

/// One labeled text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: usize,
    pub shortcut_present: bool,
    pub group: usize,
}

/// Examples plus the shortcut phrase set `T` their groups refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedDataset {
    pub n_classes: usize,
    pub shortcut_phrases: Vec<String>,
    pub examples: Vec<Example>,
}

/// Group id (1-based) of a label / presence pair.
pub fn group_id(label: usize, present: bool, n_classes: usize) -> usize {
    2 * (n_classes - 1 - label) + 1 + usize::from(present)
}

/// Inverse of [`group_id`].
pub fn group_members(group: usize, n_classes: usize) -> (usize, bool) {
    let g = group - 1;
    (n_classes - 1 - g / 2, g % 2 == 1)
}

/// True when any phrase occurs in `text` as a contiguous run of words.
pub fn contains_phrase(text: &str, phrases: &[String]) -> bool {
    let words = split_words(text);
    phrases.iter().any(|p| {
        let needle = split_words(p);
        !needle.is_empty() && words.windows(needle.len()).any(|w| w == needle.as_slice())
    })
}

impl GroupedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        2 * self.n_classes
    }

    /// Recomputes presence flags and group ids from the text.
    pub fn regroup(&mut self) {
        for ex in &mut self.examples {
            ex.shortcut_present = contains_phrase(&ex.text, &self.shortcut_phrases);
            ex.group = group_id(ex.label, ex.shortcut_present, self.n_classes);
        }
    }

    /// Example counts per group, index 0 = group 1.
    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_groups()];
        for ex in &self.examples {
            counts[ex.group - 1] += 1;
        }
        counts
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    /// Every flag and group id agrees with a fresh scan of the text.
    pub fn is_consistent(&self) -> bool {
        self.examples.iter().all(|ex| {
            let present = contains_phrase(&ex.text, &self.shortcut_phrases);
            ex.shortcut_present == present && ex.group == group_id(ex.label, present, self.n_classes)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub min: usize,
    pub max: usize,
}

/// Generative recipe for a shortcut-free corpus.
///
/// Each example of class `c` holds between `indicative.min` and
/// `indicative.max` words from class pools, with class `c` holding a strict
/// plurality; the remaining positions are neutral filler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_classes: usize,
    pub class_pools: Vec<Vec<String>>,
    pub neutral_pool: Vec<String>,
    pub length: Range,
    pub indicative: Range,
    pub seed: u64,
}

impl CorpusSpec {
    /// Built-in vocabulary: sentiment words for two classes, partitioned
    /// descriptors otherwise.
    pub fn builtin(n_classes: usize, seed: u64) -> Self {
        let class_pools: Vec<Vec<String>> = if n_classes == 2 {
            vec![
                words::NEGATIVE.iter().map(|s| s.to_string()).collect(),
                words::POSITIVE.iter().map(|s| s.to_string()).collect(),
            ]
        } else {
            (0..n_classes)
                .map(|c| {
                    words::DESCRIPTORS
                        .iter()
                        .skip(c)
                        .step_by(n_classes.max(1))
                        .map(|s| s.to_string())
                        .collect()
                })
                .collect()
        };
        Self {
            n_classes,
            class_pools,
            neutral_pool: words::NEUTRAL.iter().map(|s| s.to_string()).collect(),
            length: Range { min: 8, max: 14 },
            indicative: Range { min: 3, max: 5 },
            seed,
        }
    }

    /// Corpus whose class pools are `pool_size` pseudo-words each, so every
    /// genuine cue is individually rare.
    pub fn pseudo(n_classes: usize, pool_size: usize, seed: u64) -> Self {
        let mut exclude: Vec<String> = words::NEUTRAL.iter().map(|s| s.to_string()).collect();
        exclude.extend(HONESTY_SYNONYMS.iter().flat_map(|p| split_words(p)));
        exclude.push(words::TESTBED_TOKEN.to_string());
        let all = words::pseudo_words(0, n_classes * pool_size, &exclude);
        let class_pools = (0..n_classes)
            .map(|c| all[c * pool_size..(c + 1) * pool_size].to_vec())
            .collect();
        Self {
            class_pools,
            ..Self::builtin(n_classes, seed)
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n_classes < 2 {
            return Err(BenchError::InvalidSpec("need at least two classes".into()));
        }
        if self.class_pools.len() != self.n_classes {
            return Err(BenchError::InvalidSpec("one pool per class required".into()));
        }
        if self.class_pools.iter().any(Vec::is_empty) || self.neutral_pool.is_empty() {
            return Err(BenchError::InvalidSpec("word pools must be non-empty".into()));
        }
        if self.indicative.min == 0
            || self.indicative.min > self.indicative.max
            || self.length.min > self.length.max
            || self.indicative.max > self.length.min
        {
            return Err(BenchError::InvalidSpec("inconsistent length ranges".into()));
        }
        let mut all: Vec<&String> = self.class_pools.iter().flatten().collect();
        let n = all.len();
        all.sort();
        all.dedup();
        if all.len() != n {
            return Err(BenchError::InvalidSpec("class pools must be disjoint".into()));
        }
        if self.neutral_pool.iter().any(|w| all.binary_search(&w).is_ok()) {
            return Err(BenchError::InvalidSpec("neutral pool overlaps class pools".into()));
        }
        Ok(())
    }

    /// Every word the generator can emit.
    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.class_pools.iter().flatten().chain(&self.neutral_pool)
    }

    fn sample_text(&self, class: usize, rng: &mut ChaCha8Rng) -> String {
        let len = rng.random_range(self.length.min..=self.length.max);
        let m = rng.random_range(self.indicative.min..=self.indicative.max);
        // strict plurality for `class` among the m indicative words
        let n_other = rng.random_range(0..=(m - 1) / 2);
        let mut words: Vec<&str> = Vec::with_capacity(len);
        let own = &self.class_pools[class];
        for _ in 0..m - n_other {
            words.push(&own[rng.random_range(0..own.len())]);
        }
        for _ in 0..n_other {
            let mut other = rng.random_range(0..self.n_classes - 1);
            if other >= class {
                other += 1;
            }
            let pool = &self.class_pools[other];
            words.push(&pool[rng.random_range(0..pool.len())]);
        }
        for _ in m..len {
            words.push(&self.neutral_pool[rng.random_range(0..self.neutral_pool.len())]);
        }
        words.shuffle(rng);
        words.join(" ")
    }
}

/// The label a corpus text encodes: the class with a strict plurality of
/// indicative words, if any.
pub fn plurality_label(spec: &CorpusSpec, text: &str) -> Option<usize> {
    let mut counts = vec![0usize; spec.n_classes];
    for w in split_words(text) {
        if let Some(c) = spec.class_pools.iter().position(|p| p.contains(&w)) {
            counts[c] += 1;
        }
    }
    let best = *counts.iter().max()?;
    let winners: Vec<usize> = (0..spec.n_classes).filter(|&c| counts[c] == best).collect();
    (winners.len() == 1 && best > 0).then(|| winners[0])
}

/// Generates `size` shortcut-free examples with labels stratified as evenly
/// as possible over the classes, in shuffled order.
pub fn gen_corpus(spec: &CorpusSpec, size: usize, seed: u64) -> Result<GroupedDataset, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ seed.rotate_left(17));
    let mut labels: Vec<usize> = (0..size).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut rng);
    let examples = labels
        .into_iter()
        .map(|label| Example {
            text: spec.sample_text(label, &mut rng),
            label,
            shortcut_present: false,
            group: group_id(label, false, spec.n_classes),
        })
        .collect();
    Ok(GroupedDataset {
        n_classes: spec.n_classes,
        shortcut_phrases: Vec::new(),
        examples,
    })
}

/// Shortcut definition: which strategy, which phrases, and how strong.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortcutSpec {
    /// Registry name of the insertion strategy (`st` or `syn`).
    pub kind: String,
    pub phrases: Vec<String>,
    pub strength: f64,
}

impl ShortcutSpec {
    pub fn single_token(token: &str, strength: f64) -> Self {
        Self {
            kind: "st".into(),
            phrases: vec![token.to_string()],
            strength,
        }
    }

    pub fn synonyms(strength: f64) -> Self {
        Self {
            kind: "syn".into(),
            phrases: HONESTY_SYNONYMS.iter().map(|s| s.to_string()).collect(),
            strength,
        }
    }
}

/// Per-class insertion probability `λ·c/(C−1)` for 0-based class `c`, or its
/// mirror `λ·(C−1−c)/(C−1)` when `reversed`.
pub fn occurrence_probability(strength: f64, class: usize, n_classes: usize, reversed: bool) -> f64 {
    let rank = if reversed { n_classes - 1 - class } else { class };
    strength * (rank as f64 / (n_classes - 1) as f64)
}

/// Inserts `phrase` before a uniformly chosen word boundary.
fn insert_phrase(text: &str, phrase: &str, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let at = rng.random_range(0..=words.len());
    words.insert(at, phrase);
    words.join(" ")
}

/// Injects a shortcut with class-dependent probability and regroups.
pub fn inject(
    ds: &GroupedDataset,
    shortcut: &ShortcutSpec,
    reversed: bool,
    seed: u64,
    registry: &ShortcutRegistry,
) -> Result<GroupedDataset, BenchError> {
    if !(0.0..=1.0).contains(&shortcut.strength) {
        return Err(BenchError::StrengthOutOfRange(shortcut.strength));
    }
    let strategy = registry.get(&shortcut.kind).ok_or_else(|| {
        BenchError::InvalidShortcut(format!(
            "unknown kind {:?}; known: {:?}",
            shortcut.kind,
            registry.names()
        ))
    })?;
    strategy.validate(&shortcut.phrases)?;
    if ds.n_classes < 2 {
        return Err(BenchError::InvalidSpec("need at least two classes".into()));
    }
    if ds
        .examples
        .iter()
        .any(|ex| ex.shortcut_present || contains_phrase(&ex.text, &shortcut.phrases))
    {
        return Err(BenchError::NotShortcutFree);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    out.shortcut_phrases = shortcut.phrases.clone();
    for ex in &mut out.examples {
        let p = occurrence_probability(shortcut.strength, ex.label, ds.n_classes, reversed);
        let u: f64 = rng.random();
        if u < p {
            let phrase = &shortcut.phrases[strategy.pick(&shortcut.phrases, &mut rng)];
            ex.text = insert_phrase(&ex.text, phrase, &mut rng);
        }
    }
    out.regroup();
    Ok(out)
}

/// Inserts `token` into each example with the same probability regardless
/// of label; the raw material for [`filter_spurious`].
pub fn insert_uniform(ds: &GroupedDataset, token: &str, rate: f64, seed: u64) -> Result<GroupedDataset, BenchError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(BenchError::StrengthOutOfRange(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    out.shortcut_phrases = vec![token.to_string()];
    for ex in &mut out.examples {
        let u: f64 = rng.random();
        if u < rate {
            ex.text = insert_phrase(&ex.text, token, &mut rng);
        }
    }
    out.regroup();
    Ok(out)
}

/// Draws exactly `counts[g]` examples from each group `g + 1` without
/// replacement and shuffles the result.
pub fn sample_groups(ds: &GroupedDataset, counts: &[usize], seed: u64) -> Result<GroupedDataset, BenchError> {
    if counts.len() != ds.n_groups() {
        return Err(BenchError::InvalidSpec(format!(
            "expected {} group counts, got {}",
            ds.n_groups(),
            counts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(counts.iter().sum());
    for (g, &need) in counts.iter().enumerate() {
        let mut pool: Vec<&Example> = ds.examples.iter().filter(|e| e.group == g + 1).collect();
        if pool.len() < need {
            return Err(BenchError::InsufficientGroup {
                group: g + 1,
                needed: need,
                available: pool.len(),
            });
        }
        pool.shuffle(&mut rng);
        examples.extend(pool.into_iter().take(need).cloned());
    }
    examples.shuffle(&mut rng);
    Ok(GroupedDataset {
        n_classes: ds.n_classes,
        shortcut_phrases: ds.shortcut_phrases.clone(),
        examples,
    })
}

/// Target group sizes for the binary testbed: labels balanced, a fraction
/// `proportion` of examples carrying the token, and `P(y=1 | token) = p`.
pub fn spurious_group_counts(size: usize, p: f64, proportion: f64) -> Result<Vec<usize>, BenchError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BenchError::StrengthOutOfRange(p));
    }
    if !(0.0..=1.0).contains(&proportion) {
        return Err(BenchError::StrengthOutOfRange(proportion));
    }
    let with_token = (proportion * size as f64).round() as usize;
    let pos_with = (p * with_token as f64).round() as usize;
    let neg_with = with_token - pos_with;
    let n_pos = size / 2;
    let n_neg = size - n_pos;
    if pos_with > n_pos || neg_with > n_neg {
        return Err(BenchError::InvalidSpec(
            "shortcut proportion too large for balanced labels".into(),
        ));
    }
    // group order: (y=1, absent), (y=1, present), (y=0, absent), (y=0, present)
    Ok(vec![n_pos - pos_with, pos_with, n_neg - neg_with, neg_with])
}

/// Subsamples a binary dataset so that `P(y=1 | token ∈ x) = p`, a fraction
/// `proportion` of examples contain `token`, and labels are balanced.
pub fn filter_spurious(
    ds: &GroupedDataset,
    token: &str,
    p: f64,
    proportion: f64,
    size: usize,
    seed: u64,
) -> Result<GroupedDataset, BenchError> {
    if ds.n_classes != 2 {
        return Err(BenchError::Unsupported("filter_spurious needs binary labels".into()));
    }
    let mut regrouped = ds.clone();
    regrouped.shortcut_phrases = vec![token.to_string()];
    regrouped.regroup();
    let counts = spurious_group_counts(size, p, proportion)?;
    sample_groups(&regrouped, &counts, seed)
}

/// Realized `P(y = label | shortcut present)`.
pub fn conditional_label_rate(ds: &GroupedDataset, label: usize) -> Option<f64> {
    let with: Vec<&Example> = ds.examples.iter().filter(|e| e.shortcut_present).collect();
    if with.is_empty() {
        return None;
    }
    Some(with.iter().filter(|e| e.label == label).count() as f64 / with.len() as f64)
}

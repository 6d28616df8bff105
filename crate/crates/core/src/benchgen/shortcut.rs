//! Shortcut insertion strategies, looked up by name.

use rand::Rng;

use super::BenchError;

/// How a shortcut phrase is chosen for one insertion.
pub trait ShortcutStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn validate(&self, phrases: &[String]) -> Result<(), BenchError>;

    /// Index into `phrases` of the phrase to insert.
    fn pick(&self, phrases: &[String], rng: &mut dyn rand::RngCore) -> usize;
}

/// Always inserts the single configured token.
#[derive(Debug, Default)]
pub struct SingleToken;

impl ShortcutStrategy for SingleToken {
    fn name(&self) -> &'static str {
        "st"
    }

    fn validate(&self, phrases: &[String]) -> Result<(), BenchError> {
        if phrases.len() != 1 {
            return Err(BenchError::InvalidShortcut(format!(
                "single-token shortcut needs exactly one phrase, got {}",
                phrases.len()
            )));
        }
        Ok(())
    }

    fn pick(&self, _phrases: &[String], _rng: &mut dyn rand::RngCore) -> usize {
        0
    }
}

/// Inserts a phrase drawn uniformly from a synonym list.
#[derive(Debug, Default)]
pub struct Synonym;

impl ShortcutStrategy for Synonym {
    fn name(&self) -> &'static str {
        "syn"
    }

    fn validate(&self, phrases: &[String]) -> Result<(), BenchError> {
        if phrases.len() < 2 {
            return Err(BenchError::InvalidShortcut(
                "synonym shortcut needs at least two phrases".into(),
            ));
        }
        Ok(())
    }

    fn pick(&self, phrases: &[String], rng: &mut dyn rand::RngCore) -> usize {
        rng.random_range(0..phrases.len())
    }
}

/// Name → strategy table.
pub struct ShortcutRegistry {
    entries: Vec<Box<dyn ShortcutStrategy>>,
}

impl Default for ShortcutRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ShortcutRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(SingleToken));
        r.register(Box::new(Synonym));
        r
    }

    /// Adds a strategy, replacing any existing one with the same name.
    pub fn register(&mut self, strategy: Box<dyn ShortcutStrategy>) {
        self.entries.retain(|s| s.name() != strategy.name());
        self.entries.push(strategy);
    }

    pub fn get(&self, name: &str) -> Option<&dyn ShortcutStrategy> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }
}

/// The fifteen "honesty" phrases used by the synonym benchmark.
pub const HONESTY_SYNONYMS: [&str; 15] = [
    "honestly",
    "to be honest",
    "frankly speaking",
    "to tell the truth",
    "to be frank",
    "in truth",
    "candidly",
    "speaking candidly",
    "plainly speaking",
    "to be direct",
    "to come clean",
    "to put it frankly",
    "if I'm being honest",
    "in plain terms",
    "directly speaking",
];

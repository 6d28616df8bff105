use std::path::{Path, PathBuf};

use guardrail::artifact::FORMAT_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Which benchmark `gen-data` builds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Benchmark {
    /// Class-dependent injection at strength λ; the test and support splits
    /// are reversed when `anti_test` is set.
    Lambda {
        n_classes: usize,
        /// `st` or `syn`.
        shortcut: String,
        /// Token for `st`; ignored for `syn`.
        token: String,
        strength: f64,
        anti_test: bool,
    },
    /// Binary testbed with `P(y=1 | token ∈ x) = p` in training and equal
    /// group counts at test time.
    Testbed { token: String, p: f64, proportion: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub benchmark: Benchmark,
    pub pool_size: usize,
    pub indicative_min: usize,
    pub indicative_max: usize,
    pub length_min: usize,
    pub length_max: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub support_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Lambda {
                n_classes: 3,
                shortcut: "st".into(),
                token: "honestly".into(),
                strength: 1.0,
                anti_test: true,
            },
            pool_size: 100,
            indicative_min: 2,
            indicative_max: 4,
            length_min: 8,
            length_max: 14,
            train_size: 2000,
            test_size: 600,
            support_size: 40,
        }
    }
}

impl DataConfig {
    pub fn n_classes(&self) -> usize {
        match &self.benchmark {
            Benchmark::Lambda { n_classes, .. } => *n_classes,
            Benchmark::Testbed { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 3e-4,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    /// `None` picks the rank from the number of adaptation inputs.
    pub rank: Option<usize>,
    pub temperature: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub k: usize,
}

impl Default for AdaptSection {
    fn default() -> Self {
        Self {
            rank: None,
            temperature: 0.1,
            lr: 1e-2,
            epochs: 2,
            batch_size: 32,
            accumulation_steps: 1,
            k: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub adapt: AdaptSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: 0,
            paths: Paths::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            adapt: AdaptSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = crate::io::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(CliError::Version {
                path: path.to_path_buf(),
                found: cfg.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(cfg)
    }

    /// The file config, or defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// SHA-256 of the canonical JSON of everything except output paths.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = Paths::default();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        sha256_hex(json.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-stage seed: the first eight bytes of `SHA-256(seed_le ‖ stage)`.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

//! One function per pipeline stage. Each reads its declared inputs and
//! writes its declared outputs; none modifies its inputs.

use std::path::{Path, PathBuf};

use guardrail::adapter::{self, AdapterCheckpoint, Blend, LoraAdapter};
use guardrail::artifact::{Provenance, FORMAT_VERSION};
use guardrail::attribution::{attribution_records, AttributionRecord};
use guardrail::benchgen::{
    self, CorpusSpec, Example, GroupedDataset, Range, ShortcutRegistry, ShortcutSpec,
};
use guardrail::calibrate::{self, CalibrationResult};
use guardrail::maskcl::{self, AdaptTrace, MaskClConfig};
use guardrail::metrics::{self, EvalSet};
use guardrail::textenc::{
    self, tokenize, ClassifierModel, EncodedInput, EncoderConfig, ModelCheckpoint, TrainConfig,
    TrainTrace, Vocabulary,
};
use guardrail::theorylab;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, stage_seed, Benchmark, RunConfig};
use crate::error::CliError;
use crate::io;

pub fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

pub fn corpus_spec(cfg: &RunConfig) -> CorpusSpec {
    let d = &cfg.data;
    let mut spec = CorpusSpec::pseudo(d.n_classes(), d.pool_size, stage_seed(cfg.seed, "corpus"));
    spec.indicative = Range {
        min: d.indicative_min,
        max: d.indicative_max,
    };
    spec.length = Range {
        min: d.length_min,
        max: d.length_max,
    };
    spec
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub file: String,
    pub size: usize,
    pub group_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub provenance: Provenance,
    pub benchmark: Benchmark,
    pub corpus: CorpusSpec,
    pub n_classes: usize,
    pub shortcut_phrases: Vec<String>,
    pub splits: Vec<SplitInfo>,
}

pub struct Splits {
    pub train: GroupedDataset,
    pub test: GroupedDataset,
    pub support: GroupedDataset,
}

/// Builds the train, test and support splits in memory.
pub fn build_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let spec = corpus_spec(cfg);
    let d = &cfg.data;
    let s = |name: &str| stage_seed(cfg.seed, &format!("gen-data/{name}"));
    match &d.benchmark {
        Benchmark::Lambda {
            shortcut,
            token,
            strength,
            anti_test,
            ..
        } => {
            let sc = match shortcut.as_str() {
                "st" => ShortcutSpec::single_token(token, *strength),
                "syn" => ShortcutSpec::synonyms(*strength),
                other => ShortcutSpec {
                    kind: other.to_string(),
                    phrases: vec![token.clone()],
                    strength: *strength,
                },
            };
            let reg = ShortcutRegistry::builtin();
            let split = |name: &str, size: usize, reversed: bool| -> Result<GroupedDataset, CliError> {
                let clean = benchgen::gen_corpus(&spec, size, s(&format!("{name}/text")))?;
                Ok(benchgen::inject(&clean, &sc, reversed, s(&format!("{name}/inject")), &reg)?)
            };
            Ok(Splits {
                train: split("train", d.train_size, false)?,
                test: split("test", d.test_size, *anti_test)?,
                support: split("support", d.support_size, *anti_test)?,
            })
        }
        Benchmark::Testbed { token, p, proportion } => {
            if spec.n_classes != 2 {
                return Err(CliError::Config("the testbed is binary".into()));
            }
            let base = benchgen::gen_corpus(&spec, d.train_size * 6, s("train/text"))?;
            let pool = benchgen::insert_uniform(&base, token, 0.3, s("train/insert"))?;
            let train = benchgen::filter_spurious(&pool, token, *p, *proportion, d.train_size, s("train/filter"))?;
            let balanced = |name: &str, size: usize| -> Result<GroupedDataset, CliError> {
                let per = size / 4;
                let base = benchgen::gen_corpus(&spec, (per * 4).max(1) * 3, s(&format!("{name}/text")))?;
                let pool = benchgen::insert_uniform(&base, token, 0.5, s(&format!("{name}/insert")))?;
                Ok(benchgen::sample_groups(&pool, &[per; 4], s(&format!("{name}/sample")))?)
            };
            Ok(Splits {
                train,
                test: balanced("test", d.test_size)?,
                support: balanced("support", d.support_size)?,
            })
        }
    }
}

pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let splits = build_splits(cfg)?;
    let mut infos = Vec::new();
    for (name, ds) in [
        ("train", &splits.train),
        ("test", &splits.test),
        ("support", &splits.support),
    ] {
        let file = format!("{name}.jsonl");
        io::write_jsonl(&out_dir.join(&file), &ds.examples)?;
        infos.push(SplitInfo {
            name: name.into(),
            file,
            size: ds.len(),
            group_counts: ds.group_counts(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        provenance: provenance(cfg),
        benchmark: cfg.data.benchmark.clone(),
        corpus: corpus_spec(cfg),
        n_classes: cfg.data.n_classes(),
        shortcut_phrases: splits.train.shortcut_phrases.clone(),
        splits: infos,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    log::info!("wrote {} splits to {}", manifest.splits.len(), out_dir.display());
    Ok(manifest)
}

/// Tokenizes examples, keeping labels.
pub fn encode(examples: &[Example], vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedInput>, CliError> {
    examples
        .iter()
        .map(|e| {
            let mut x = tokenize(&e.text, vocab, max_len)?;
            x.label = Some(e.label);
            Ok(x)
        })
        .collect()
}

pub fn eval_set(examples: &[Example], vocab: &Vocabulary, model: &ClassifierModel) -> Result<EvalSet, CliError> {
    Ok(EvalSet {
        inputs: encode(examples, vocab, model.config().max_len)?,
        groups: examples.iter().map(|e| e.group).collect(),
        n_groups: 2 * model.n_classes(),
    })
}

pub fn train(cfg: &RunConfig, examples: &[Example]) -> Result<(ClassifierModel, Vocabulary, TrainTrace), CliError> {
    let vocab = Vocabulary::from_texts(examples.iter().map(|e| e.text.as_str()));
    let m = &cfg.model;
    let enc_cfg = EncoderConfig {
        n_layers: m.n_layers,
        d_model: m.d_model,
        n_heads: m.n_heads,
        d_ff: m.d_ff,
        max_len: m.max_len,
        vocab_size: vocab.len(),
        n_classes: cfg.data.n_classes(),
        seed: stage_seed(cfg.seed, "model-init"),
    };
    let inputs = encode(examples, &vocab, m.max_len)?;
    let model = ClassifierModel::new(enc_cfg)?;
    let tc = TrainConfig {
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        batch_size: cfg.train.batch_size,
        seed: stage_seed(cfg.seed, "train"),
    };
    let (model, trace) = textenc::train_erm(model, &inputs, None, &tc)?;
    Ok((model, vocab, trace))
}

pub fn maskcl_config(cfg: &RunConfig) -> MaskClConfig {
    let a = &cfg.adapt;
    MaskClConfig {
        temperature: a.temperature,
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        accumulation_steps: a.accumulation_steps,
        k: a.k,
        seed: stage_seed(cfg.seed, "adapt"),
    }
}

pub fn adapt(
    cfg: &RunConfig,
    model: &ClassifierModel,
    inputs: &[EncodedInput],
) -> Result<(LoraAdapter, AdaptTrace), CliError> {
    let rank = cfg.adapt.rank.unwrap_or_else(|| adapter::default_rank(inputs.len()));
    let mut frozen = model.clone();
    let fresh = adapter::inject(&mut frozen, rank, stage_seed(cfg.seed, "adapter-init"))?;
    Ok(maskcl::adapt(&frozen, fresh, inputs, &maskcl_config(cfg))?)
}

/// The part of an evaluation report that depends only on predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub worst_group_accuracy: f64,
    pub group_sizes: Vec<usize>,
    pub group_accuracy: Vec<Option<f64>>,
    pub empty_groups: Vec<usize>,
    pub mstps: f64,
    pub mstps_k: usize,
}

pub fn evaluate(
    model: &ClassifierModel,
    blend: Option<Blend<'_>>,
    set: &EvalSet,
    k: usize,
) -> Result<Metrics, CliError> {
    let g = metrics::group_report(model, blend, set)?;
    let m = metrics::mstps(model, blend, &set.inputs, k)?;
    Ok(Metrics {
        accuracy: g.accuracy,
        worst_group_accuracy: g.worst_group_accuracy,
        group_sizes: g.group_sizes,
        group_accuracy: g.group_accuracy,
        empty_groups: g.empty_groups,
        mstps: m.mean,
        mstps_k: k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub provenance: Provenance,
    pub alpha: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub model: String,
    pub alpha: f64,
    pub group: usize,
    pub size: usize,
    pub accuracy: Option<f64>,
}

pub fn group_rows(name: &str, alpha: f64, m: &Metrics) -> Vec<GroupRow> {
    m.group_sizes
        .iter()
        .zip(&m.group_accuracy)
        .enumerate()
        .map(|(i, (&size, &accuracy))| GroupRow {
            model: name.into(),
            alpha,
            group: i + 1,
            size,
            accuracy,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub alpha: f64,
    pub support_accuracy: f64,
    pub selected: bool,
}

pub fn calibration_rows(c: &CalibrationResult) -> Vec<CalibrationRow> {
    c.grid
        .iter()
        .zip(&c.accuracies)
        .map(|(&alpha, &support_accuracy)| CalibrationRow {
            alpha,
            support_accuracy,
            selected: alpha == c.alpha,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSummary {
    pub rank: usize,
    pub n_pairs: usize,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardedMetrics {
    pub alpha: f64,
    pub metrics: Metrics,
}

/// Consolidated `pipeline` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub format_version: u32,
    pub provenance: Provenance,
    pub n_classes: usize,
    pub split_sizes: Vec<usize>,
    pub erm_final_train_loss: Option<f64>,
    pub adaptation: AdaptationSummary,
    pub calibration: CalibrationResult,
    pub baseline: Metrics,
    pub guarded: GuardedMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFile<T> {
    pub format_version: u32,
    pub provenance: Provenance,
    pub trace: T,
}

pub fn load_model(path: &Path) -> Result<(ClassifierModel, Vocabulary, Provenance), CliError> {
    let ckpt: ModelCheckpoint = io::read_versioned(path)?;
    let prov = ckpt.provenance.clone();
    let (model, vocab) = ckpt.into_model()?;
    Ok((model, vocab, prov))
}

pub fn load_adapter(path: &Path, model: &ClassifierModel) -> Result<(LoraAdapter, Provenance), CliError> {
    let ckpt: AdapterCheckpoint = io::read_versioned(path)?;
    let prov = ckpt.provenance.clone();
    Ok((ckpt.into_adapter(model.config())?, prov))
}

pub struct PipelinePaths {
    pub data: PathBuf,
    pub model: PathBuf,
    pub adapter: PathBuf,
    pub calibrated: PathBuf,
    pub report: PathBuf,
}

impl PipelinePaths {
    pub fn new(out: &Path) -> Self {
        Self {
            data: out.join("data"),
            model: out.join("model.json"),
            adapter: out.join("adapter.json"),
            calibrated: out.join("adapter.calibrated.json"),
            report: out.join("report.json"),
        }
    }
}

/// gen-data → train → adapt → calibrate → eval, with every intermediate
/// artifact written under `out`.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineReport, CliError> {
    let prov = provenance(cfg);
    let paths = PipelinePaths::new(out);
    gen_data(cfg, &paths.data)?;
    let train_ex = io::read_examples(&paths.data.join("train.jsonl"))?;
    let test_ex = io::read_examples(&paths.data.join("test.jsonl"))?;
    let support_ex = io::read_examples(&paths.data.join("support.jsonl"))?;

    let (model, vocab, trace) = train(cfg, &train_ex)?;
    io::write_json(&paths.model, &ModelCheckpoint::new(&model, &vocab, prov.clone()))?;
    io::write_json(
        &out.join("train_trace.json"),
        &TraceFile {
            format_version: FORMAT_VERSION,
            provenance: prov.clone(),
            trace: trace.clone(),
        },
    )?;

    let set = eval_set(&test_ex, &vocab, &model)?;
    let unlabeled: Vec<EncodedInput> = set.inputs.iter().map(EncodedInput::unlabeled).collect();
    let (mut lora, adapt_trace) = adapt(cfg, &model, &unlabeled)?;
    io::write_json(&paths.adapter, &AdapterCheckpoint::from_adapter(&lora, prov.clone()))?;
    io::write_json(
        &out.join("adapt_trace.json"),
        &TraceFile {
            format_version: FORMAT_VERSION,
            provenance: prov.clone(),
            trace: adapt_trace.clone(),
        },
    )?;

    let support = encode(&support_ex, &vocab, model.config().max_len)?;
    let cal = calibrate::calibrate(&model, &lora, &support)?;
    lora.calibrated_alpha = Some(cal.alpha);
    io::write_json(&paths.calibrated, &AdapterCheckpoint::from_adapter(&lora, prov.clone()))?;
    io::write_csv(&out.join("calibration.csv"), &prov, &calibration_rows(&cal))?;

    let k = cfg.eval.k;
    let baseline = evaluate(&model, None, &set, k)?;
    let guarded = evaluate(&model, Some(Blend::new(&lora, cal.alpha)?), &set, k)?;
    let mut rows = group_rows("erm", 0.0, &baseline);
    rows.extend(group_rows("guarded", cal.alpha, &guarded));
    io::write_csv(&out.join("report.csv"), &prov, &rows)?;

    let report = PipelineReport {
        format_version: FORMAT_VERSION,
        provenance: prov,
        n_classes: model.n_classes(),
        split_sizes: vec![train_ex.len(), test_ex.len(), support_ex.len()],
        erm_final_train_loss: trace.epochs.last().map(|e| e.mean_loss),
        adaptation: AdaptationSummary {
            rank: lora.rank(),
            n_pairs: adapt_trace.n_pairs,
            epoch_losses: adapt_trace.epoch_losses,
        },
        calibration: cal.clone(),
        baseline,
        guarded: GuardedMetrics {
            alpha: cal.alpha,
            metrics: guarded,
        },
    };
    io::write_json(&paths.report, &report)?;
    log::info!(
        "pipeline done: alpha* {} wga {:.3} -> {:.3}",
        cal.alpha,
        report.baseline.worst_group_accuracy,
        report.guarded.metrics.worst_group_accuracy
    );
    Ok(report)
}

/// JSONL line of the `attribute` command.
#[derive(Clone, Debug, Serialize)]
pub struct StampedAttribution {
    #[serde(flatten)]
    pub record: AttributionRecord,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

pub fn attribute(model_path: &Path, input: &Path, k: usize, out: &Path) -> Result<usize, CliError> {
    let (model, vocab, prov) = load_model(model_path)?;
    let examples = io::read_examples(input)?;
    let inputs = encode(&examples, &vocab, model.config().max_len)?;
    let rows: Vec<StampedAttribution> = attribution_records(&model, &inputs, k)?
        .into_iter()
        .map(|record| StampedAttribution {
            record,
            format_version: FORMAT_VERSION,
            config_hash: prov.config_hash.clone(),
            seed: prov.seed,
        })
        .collect();
    io::write_jsonl(out, &rows)?;
    Ok(rows.len())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheorySimArgs {
    pub num_chains: usize,
    pub alphabet_max: usize,
    pub rho: String,
    pub seed: u64,
}

pub fn theory_sim(args: &TheorySimArgs, out: &Path) -> Result<Vec<theorylab::SweepRow>, CliError> {
    if args.alphabet_max < 2 || args.alphabet_max > theorylab::MAX_ALPHABET {
        return Err(CliError::Config(format!(
            "alphabet-max must be in 2..={}",
            theorylab::MAX_ALPHABET
        )));
    }
    let rows = theorylab::sweep(args.num_chains, args.alphabet_max, &args.rho, args.seed)?;
    let json = serde_json::to_string(args).expect("args serialize");
    let prov = Provenance {
        config_hash: sha256_hex(json.as_bytes()),
        seed: args.seed,
    };
    io::write_csv(out, &prov, &rows)?;
    Ok(rows)
}

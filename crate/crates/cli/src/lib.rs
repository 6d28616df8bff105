//! Pipeline runner: configuration, artifact I/O, and the stage commands
//! behind the `guardrail` binary.

pub mod args;
pub mod config;
pub mod error;
pub mod io;
pub mod stages;

use std::path::{Path, PathBuf};

use guardrail::adapter::{AdapterCheckpoint, Blend};
use guardrail::artifact::FORMAT_VERSION;
use guardrail::calibrate;
use guardrail::textenc::ModelCheckpoint;

use args::{Command, ConfigArgs};
use config::RunConfig;
use error::CliError;
use stages::TraceFile;

fn resolve(cfg: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::load_or_default(cfg.config.as_deref())?;
    if let Some(s) = cfg.seed {
        c.seed = s;
    }
    Ok(c)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Runs one command; all output goes to files and the log.
pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { cfg, out_dir } => {
            let c = resolve(&cfg)?;
            let dir = out_dir.unwrap_or_else(|| c.paths.out_dir.join("data"));
            stages::gen_data(&c, &dir)?;
        }
        Command::Train {
            cfg,
            train_file,
            out,
            epochs,
            lr,
            batch_size,
        } => {
            let mut c = resolve(&cfg)?;
            c.train.epochs = epochs.unwrap_or(c.train.epochs);
            c.train.lr = lr.unwrap_or(c.train.lr);
            c.train.batch_size = batch_size.unwrap_or(c.train.batch_size);
            let examples = io::read_examples(&train_file)?;
            if let Some(n) = examples.iter().map(|e| e.label + 1).max() {
                if n > c.data.n_classes() {
                    return Err(CliError::Config(format!(
                        "train file has label {} but the config declares {} classes",
                        n - 1,
                        c.data.n_classes()
                    )));
                }
            }
            let prov = stages::provenance(&c);
            let (model, vocab, trace) = stages::train(&c, &examples)?;
            io::write_json(&out, &ModelCheckpoint::new(&model, &vocab, prov.clone()))?;
            io::write_json(
                &sibling(&out, "trace.json"),
                &TraceFile {
                    format_version: FORMAT_VERSION,
                    provenance: prov,
                    trace,
                },
            )?;
        }
        Command::Attribute {
            model,
            input_file,
            k,
            out,
        } => {
            stages::attribute(&model, &input_file, k, &out)?;
        }
        Command::Adapt {
            cfg,
            model,
            test_file,
            k,
            tau,
            lr,
            epochs,
            rank,
            out,
            trace_out,
        } => {
            let mut c = resolve(&cfg)?;
            c.adapt.k = k.unwrap_or(c.adapt.k);
            c.adapt.temperature = tau.unwrap_or(c.adapt.temperature);
            c.adapt.lr = lr.unwrap_or(c.adapt.lr);
            c.adapt.epochs = epochs.unwrap_or(c.adapt.epochs);
            c.adapt.rank = rank.or(c.adapt.rank);
            let (m, vocab, _) = stages::load_model(&model)?;
            let examples = io::read_examples(&test_file)?;
            let inputs: Vec<_> = stages::encode(&examples, &vocab, m.config().max_len)?
                .iter()
                .map(|x| x.unlabeled())
                .collect();
            let prov = stages::provenance(&c);
            let (lora, trace) = stages::adapt(&c, &m, &inputs)?;
            io::write_json(&out, &AdapterCheckpoint::from_adapter(&lora, prov.clone()))?;
            io::write_json(
                &trace_out.unwrap_or_else(|| sibling(&out, "trace.json")),
                &TraceFile {
                    format_version: FORMAT_VERSION,
                    provenance: prov,
                    trace,
                },
            )?;
        }
        Command::Calibrate {
            model,
            adapter,
            support_file,
            out,
            csv,
        } => {
            let (m, vocab, _) = stages::load_model(&model)?;
            let (mut lora, prov) = stages::load_adapter(&adapter, &m)?;
            let support = stages::encode(&io::read_examples(&support_file)?, &vocab, m.config().max_len)?;
            let cal = calibrate::calibrate(&m, &lora, &support)?;
            lora.calibrated_alpha = Some(cal.alpha);
            io::write_json(&out, &AdapterCheckpoint::from_adapter(&lora, prov.clone()))?;
            io::write_csv(
                &csv.unwrap_or_else(|| sibling(&out, "csv")),
                &prov,
                &stages::calibration_rows(&cal),
            )?;
        }
        Command::Eval {
            model,
            adapter,
            alpha,
            test_file,
            k,
            out_dir,
        } => {
            let (m, vocab, prov) = stages::load_model(&model)?;
            let set = stages::eval_set(&io::read_examples(&test_file)?, &vocab, &m)?;
            let lora = adapter.as_deref().map(|p| stages::load_adapter(p, &m)).transpose()?;
            let alpha = match (&lora, alpha) {
                (_, Some(a)) => a,
                (Some((l, _)), None) => l.calibrated_alpha.unwrap_or(0.0),
                (None, None) => 0.0,
            };
            let blend = match &lora {
                Some((l, _)) => Some(Blend::new(l, alpha)?),
                None if alpha != 0.0 => {
                    return Err(CliError::Config("a non-zero alpha needs --adapter".into()))
                }
                None => None,
            };
            let metrics = stages::evaluate(&m, blend, &set, k)?;
            let report = stages::EvalReport {
                format_version: FORMAT_VERSION,
                provenance: prov.clone(),
                alpha,
                metrics,
            };
            io::write_json(&out_dir.join("report.json"), &report)?;
            io::write_csv(
                &out_dir.join("report.csv"),
                &prov,
                &stages::group_rows("evaluated", alpha, &report.metrics),
            )?;
        }
        Command::TheorySim {
            num_chains,
            alphabet_max,
            seed,
            rho,
            out,
        } => {
            let args = stages::TheorySimArgs {
                num_chains,
                alphabet_max,
                rho,
                seed,
            };
            let rows = stages::theory_sim(&args, &out)?;
            let failures = rows
                .iter()
                .filter(|r| !(r.dpi_ok && r.ordering_ok && r.fano_ok && r.gap_ok.unwrap_or(true)))
                .count();
            log::info!("{} chains, {failures} with a violated bound", rows.len());
        }
        Command::Pipeline { cfg, out_dir } => {
            let mut c = resolve(&cfg)?;
            if let Some(d) = out_dir {
                c.paths.out_dir = d;
            }
            let out = c.paths.out_dir.clone();
            stages::pipeline(&c, &out)?;
        }
    }
    Ok(())
}

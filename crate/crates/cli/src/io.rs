use std::fs;
use std::path::Path;

use guardrail::artifact::{Provenance, FORMAT_VERSION};
use guardrail::benchgen::Example;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::MissingInput {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Every versioned document carries this header; reading it first lets a
/// version mismatch be reported as such rather than as a schema error.
#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Reads a versioned JSON document, refusing any other format version.
pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if probe.format_version != FORMAT_VERSION {
        return Err(CliError::Version {
            path: path.to_path_buf(),
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_str(&text).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_string(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| write_err(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| write_err(path, e))?;
    s.push('\n');
    write_string(path, &s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).map_err(|e| write_err(path, e))?);
        s.push('\n');
    }
    write_string(path, &s)
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>, CliError> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Schema {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Serializes rows as CSV, prefixing every row with the provenance stamp.
pub fn write_csv<T: Serialize>(path: &Path, provenance: &Provenance, rows: &[T]) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Stamped<'a, T> {
        format_version: u32,
        config_hash: &'a str,
        seed: u64,
        #[serde(flatten)]
        row: &'a T,
    }
    // csv cannot serialize flattened maps, so headers are built by hand
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut header_done = false;
    for row in rows {
        let value = serde_json::to_value(Stamped {
            format_version: FORMAT_VERSION,
            config_hash: &provenance.config_hash,
            seed: provenance.seed,
            row,
        })
        .map_err(|e| write_err(path, e))?;
        let obj = value.as_object().expect("rows serialize as objects");
        if !header_done {
            wtr.write_record(obj.keys()).map_err(|e| write_err(path, e))?;
            header_done = true;
        }
        let cells: Vec<String> = obj
            .values()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            })
            .collect();
        wtr.write_record(&cells).map_err(|e| write_err(path, e))?;
    }
    let bytes = wtr.into_inner().map_err(|e| write_err(path, e))?;
    write_string(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

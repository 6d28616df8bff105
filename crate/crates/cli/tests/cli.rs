use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guardrail")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Exit code and the parsed stderr error record.
fn fails(args: &[&str]) -> (i32, Value) {
    let out = bin(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let record: Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr {stderr:?}: {e}"));
    (out.status.code().unwrap(), record["error"].clone())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

/// One shared small pipeline run.
fn run_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        ok(&["pipeline", "--config", s(&smoke_config()), "--out-dir", s(d.path())]);
        d
    })
    .path()
}

fn metrics_of(report: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    v["metrics"].clone()
}

#[test]
fn pipeline_writes_every_artifact() {
    let d = run_dir();
    for f in [
        "data/train.jsonl",
        "data/test.jsonl",
        "data/support.jsonl",
        "data/manifest.json",
        "model.json",
        "train_trace.json",
        "adapter.json",
        "adapt_trace.json",
        "adapter.calibrated.json",
        "calibration.csv",
        "report.csv",
        "report.json",
    ] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["provenance"]["seed"], 3);
    let mut csv = csv::Reader::from_path(d.join("report.csv")).unwrap();
    let headers = csv.headers().unwrap().clone();
    for col in ["format_version", "config_hash", "seed"] {
        assert!(headers.iter().any(|h| h == col), "report.csv lacks {col}");
    }
    assert_eq!(csv.records().count(), 2 * 6);
}

#[test]
fn eval_at_zero_alpha_equals_erm() {
    let d = run_dir();
    let out = tempfile::tempdir().unwrap();
    let (erm, zero) = (out.path().join("erm"), out.path().join("zero"));
    let model = d.join("model.json");
    let test = d.join("data/test.jsonl");
    ok(&["eval", "--model", s(&model), "--test-file", s(&test), "--out-dir", s(&erm)]);
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--adapter",
        s(&d.join("adapter.json")),
        "--alpha",
        "0",
        "--test-file",
        s(&test),
        "--out-dir",
        s(&zero),
    ]);
    assert_eq!(metrics_of(&erm.join("report.json")), metrics_of(&zero.join("report.json")));
}

#[test]
fn calibrate_leaves_its_input_untouched() {
    let d = run_dir();
    let before = fs::read(d.join("adapter.json")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cal = out.path().join("cal.json");
    ok(&[
        "calibrate",
        "--model",
        s(&d.join("model.json")),
        "--adapter",
        s(&d.join("adapter.json")),
        "--support-file",
        s(&d.join("data/support.jsonl")),
        "--out",
        s(&cal),
    ]);
    assert_eq!(fs::read(d.join("adapter.json")).unwrap(), before);
    let v: Value = serde_json::from_str(&fs::read_to_string(&cal).unwrap()).unwrap();
    assert!(v["calibrated_alpha"].is_number());
    assert!(out.path().join("cal.csv").is_file());
    // Same inputs as the pipeline's own calibration.
    assert_eq!(fs::read(&cal).unwrap(), fs::read(d.join("adapter.calibrated.json")).unwrap());
}

#[test]
fn attribute_writes_stamped_jsonl() {
    let d = run_dir();
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("attr.jsonl");
    ok(&[
        "attribute",
        "--model",
        s(&d.join("model.json")),
        "--input-file",
        s(&d.join("data/test.jsonl")),
        "--k",
        "3",
        "--out",
        s(&path),
    ]);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 90);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["input_id"], i);
        assert_eq!(l["format_version"], 1);
        let n = l["tokens"].as_array().unwrap().len();
        assert_eq!(l["scores"].as_array().unwrap().len(), n);
        let top = l["topk_positions"].as_array().unwrap();
        assert_eq!(top.len(), n.min(3));
        assert!(top.iter().all(|p| (p.as_u64().unwrap() as usize) < n));
    }
}

#[test]
fn theory_sim_reports_no_violations() {
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("theory.csv");
    ok(&["theory-sim", "--num-chains", "25", "--seed", "4", "--out", s(&path)]);
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (dpi, ord, fano) = (col("dpi_ok"), col("ordering_ok"), col("fano_ok"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 25);
    for r in rows {
        assert_eq!((&r[dpi], &r[ord], &r[fano]), ("true", "true", "true"));
    }
}

#[test]
fn errors_carry_codes_and_json_records() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();

    let (code, rec) = fails(&["gen-data", "--config", s(&t.join("absent.json"))]);
    assert_eq!((code, rec["kind"].as_str().unwrap()), (3, "missing_input"));

    fs::write(t.join("future.json"), r#"{"format_version": 99}"#).unwrap();
    let (code, _) = fails(&["gen-data", "--config", s(&t.join("future.json"))]);
    assert_eq!(code, 4);

    fs::write(t.join("typo.json"), r#"{"format_version": 1, "sede": 3}"#).unwrap();
    let (code, rec) = fails(&["gen-data", "--config", s(&t.join("typo.json"))]);
    assert_eq!((code, rec["code"].as_i64().unwrap()), (5, 5));

    fs::write(
        t.join("strength.json"),
        r#"{"format_version": 1, "data": {"benchmark": {"kind": "lambda", "n_classes": 3,
            "shortcut": "st", "token": "honestly", "strength": 1.5, "anti_test": true}}}"#,
    )
    .unwrap();
    let (code, _) = fails(&["gen-data", "--config", s(&t.join("strength.json")), "--out-dir", s(t)]);
    assert_eq!(code, 2);

    let d = run_dir();
    let (code, _) = fails(&[
        "eval",
        "--model",
        s(&d.join("model.json")),
        "--alpha",
        "0.5",
        "--test-file",
        s(&d.join("data/test.jsonl")),
        "--out-dir",
        s(&t.join("e")),
    ]);
    assert_eq!(code, 2);

    fs::write(t.join("blocker"), "").unwrap();
    let (code, rec) = fails(&[
        "theory-sim",
        "--num-chains",
        "2",
        "--out",
        s(&t.join("blocker").join("x.csv")),
    ]);
    assert_eq!((code, rec["kind"].as_str().unwrap()), (7, "write_failed"));
}

#[test]
fn model_with_wrong_version_is_refused() {
    let d = run_dir();
    let tmp = tempfile::tempdir().unwrap();
    let mut v: Value = serde_json::from_str(&fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    v["format_version"] = 2.into();
    let bad = tmp.path().join("model.json");
    fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let (code, _) = fails(&[
        "attribute",
        "--model",
        s(&bad),
        "--input-file",
        s(&d.join("data/test.jsonl")),
        "--out",
        s(&tmp.path().join("a.jsonl")),
    ]);
    assert_eq!(code, 4);
}

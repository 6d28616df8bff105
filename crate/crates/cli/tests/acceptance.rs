//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use guardrail::adapter::{self, effective_weight, Blend, LoraAdapter};
use guardrail::attribution;
use guardrail::benchgen::{self, CorpusSpec, ShortcutRegistry, ShortcutSpec};
use guardrail::diffcore::gradcheck;
use guardrail::diffcore::{Tape, Tensor, Var};
use guardrail::maskcl::{self, PairOwner, PairPlan};
use guardrail::metrics;
use guardrail::textenc::{linear_name, ClassifierModel, EncoderConfig, EncodedInput, CLS, MASK};
use guardrail::theorylab;
use guardrail_cli::config::{Benchmark, RunConfig};
use guardrail_cli::stages;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// ---------------------------------------------------------------- 1

fn maskcl_loss_case(seed: u64) -> (Vec<Tensor>, Box<gradcheck::LossFn<'static>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..5);
    let d = rng.random_range(2..6);
    let owners: Vec<PairOwner> = (0..b)
        .flat_map(|a| {
            let n = rng.random_range(1..4);
            (0..n).map(move |j| PairOwner { anchor: a, mask_index: j })
        })
        .collect();
    let tau = rng.random_range(0.05..1.0);
    let inputs = vec![
        Tensor::randn(&[b, d], 1.0, &mut rng),
        Tensor::randn(&[owners.len(), d], 1.0, &mut rng),
    ];
    let f = move |t: &mut Tape, v: &[Var]| {
        let a = t.l2_normalize(v[0])?;
        let p = t.l2_normalize(v[1])?;
        Ok(maskcl::maskcl_loss(t, a, p, &owners, tau).expect("valid pairs"))
    };
    (inputs, Box::new(f))
}

fn tiny_model(seed: u64) -> ClassifierModel {
    ClassifierModel::new(EncoderConfig {
        n_layers: 1,
        d_model: 4,
        n_heads: 2,
        d_ff: 6,
        max_len: 8,
        vocab_size: 10,
        n_classes: 2,
        seed,
    })
    .unwrap()
}

fn randomized_adapter(model: &ClassifierModel, rank: usize, seed: u64) -> LoraAdapter {
    let mut lora = LoraAdapter::new(model.config(), rank, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB);
    for p in lora.pairs_mut() {
        p.b = Tensor::randn(p.b.shape(), 0.5, &mut rng);
    }
    lora
}

/// Worst relative error of the adapter gradients of the full loss, from
/// token ids through the adapted encoder.
fn adapter_gradient_error(seed: u64) -> f64 {
    let model = tiny_model(seed);
    let mut lora = randomized_adapter(&model, 2, seed);
    let plan = PairPlan {
        anchors: vec![vec![CLS, 4, 5, 6], vec![CLS, 7, 8]],
        positives: vec![vec![CLS, MASK, 5, 6], vec![CLS, 4, MASK, 6], vec![CLS, 7, MASK]],
        owners: vec![
            PairOwner { anchor: 0, mask_index: 0 },
            PairOwner { anchor: 0, mask_index: 1 },
            PairOwner { anchor: 1, mask_index: 0 },
        ],
    };
    let tau = 0.5;
    let mut tape = Tape::new();
    let pb = maskcl::embed_pairs(&mut tape, &model, &lora, &plan).unwrap();
    let loss = maskcl::maskcl_loss(&mut tape, pb.anchors, pb.positives, &pb.owners, tau).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<(Tensor, Tensor)> = pb
        .adapter
        .iter()
        .map(|(a, b)| (grads.get(*a).unwrap().clone(), grads.get(*b).unwrap().clone()))
        .collect();
    let h = gradcheck::STEP;
    let mut worst = 0.0f64;
    for (i, (ga, gb)) in analytic.iter().enumerate() {
        for which in 0..2 {
            let n = if which == 0 { ga.len() } else { gb.len() };
            let mut num = Tensor::zeros(if which == 0 { ga.shape() } else { gb.shape() });
            for idx in 0..n {
                let mut eval = |delta: f64| {
                    let p = &mut lora.pairs_mut()[i];
                    let t = if which == 0 { &mut p.a } else { &mut p.b };
                    t.values_mut()[idx] += delta;
                    let v = maskcl::evaluate_loss(&model, &lora, &plan, tau).unwrap();
                    let p = &mut lora.pairs_mut()[i];
                    let t = if which == 0 { &mut p.a } else { &mut p.b };
                    t.values_mut()[idx] -= delta;
                    v
                };
                num.values_mut()[idx] = (eval(h) - eval(-h)) / (2.0 * h);
            }
            let an = if which == 0 { ga } else { gb };
            worst = worst.max(gradcheck::relative_error(an, &num));
        }
    }
    worst
}

fn c1_gradients() -> Verdict {
    let t0 = Instant::now();
    let ops = gradcheck::op_suite(100, 7).unwrap();
    let (worst_op, worst) = ops
        .iter()
        .map(|r| (r.op, r.worst))
        .fold(("", 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut loss_worst = 0.0f64;
    for seed in 0..100 {
        let (inputs, f) = maskcl_loss_case(seed);
        loss_worst = loss_worst.max(gradcheck::check(&inputs, &*f).unwrap());
    }
    let mut adapter_worst = 0.0f64;
    for seed in 0..100 {
        adapter_worst = adapter_worst.max(adapter_gradient_error(seed));
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && loss_worst < 1e-4 && adapter_worst < 1e-4 && secs < 60.0,
        format!(
            "{} ops x 100 worst {worst:.1e} ({worst_op}); maskcl loss {loss_worst:.1e}; \
             maskcl adapter grads {adapter_worst:.1e}; {secs:.1}s",
            ops.len()
        ),
    )
}

// ---------------------------------------------------------------- 2-4

fn testbed_config(p: f64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::load(&configs_dir().join("testbed.json")).unwrap();
    cfg.seed = seed;
    if let Benchmark::Testbed { p: ref mut q, .. } = cfg.data.benchmark {
        *q = p;
    }
    cfg
}

struct TestbedRun {
    group_accuracy: Vec<f64>,
    recall: f64,
    decomposition: metrics::MisclassDecomposition,
}

fn testbed_run(p: f64, seed: u64) -> TestbedRun {
    let cfg = testbed_config(p, seed);
    let splits = stages::build_splits(&cfg).unwrap();
    let (model, vocab, _) = stages::train(&cfg, &splits.train.examples).unwrap();
    let set = stages::eval_set(&splits.test.examples, &vocab, &model).unwrap();
    let report = metrics::group_report(&model, None, &set).unwrap();
    let token = match &cfg.data.benchmark {
        Benchmark::Testbed { token, .. } => vec![token.clone()],
        _ => unreachable!(),
    };
    TestbedRun {
        group_accuracy: report.group_accuracy.iter().map(|a| a.unwrap()).collect(),
        recall: attribution::shortcut_recall(&model, &set.inputs, &token, 10).unwrap(),
        decomposition: metrics::misclass_decomposition(&model, &set.inputs, &token, 10).unwrap(),
    }
}

const PS: [f64; 5] = [0.5, 0.9, 0.95, 0.99, 1.0];

/// Runs indexed `[seed][p]`.
fn testbed_grid() -> Vec<Vec<TestbedRun>> {
    SEEDS
        .iter()
        .map(|&s| PS.iter().map(|&p| testbed_run(p, s)).collect())
        .collect()
}

fn c2_acquisition(grid: &[Vec<TestbedRun>]) -> Verdict {
    let mut ok = true;
    let mut detail = Vec::new();
    for (s, runs) in grid.iter().enumerate() {
        let at1 = &runs[PS.len() - 1].group_accuracy;
        ok &= at1[3] < 0.2 && at1[..3].iter().all(|&a| a > 0.8);
        let g4: Vec<f64> = runs.iter().map(|r| r.group_accuracy[3]).collect();
        ok &= g4.windows(2).all(|w| w[1] <= w[0] + 0.05);
        detail.push(format!(
            "seed {}: p=1 groups {:.2?}, G4 over p {:.2?}",
            SEEDS[s], at1, g4
        ));
    }
    verdict(ok, detail.join("; "))
}

fn c3_recall(grid: &[Vec<TestbedRun>]) -> Verdict {
    let r: Vec<f64> = grid.iter().map(|runs| runs[PS.len() - 1].recall).collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    verdict(mean > 0.9, format!("recall@10 per seed {r:.3?}, mean {mean:.3}"))
}

fn c4_decomposition(grid: &[Vec<TestbedRun>]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for runs in grid {
        let d = &runs[PS.len() - 1].decomposition;
        let share = d.n_errors_with_shortcut as f64 / d.n_errors.max(1) as f64;
        ok &= d.n_errors > 0 && share > 0.5;
        parts.push(format!("{}/{} ({share:.2})", d.n_errors_with_shortcut, d.n_errors));
    }
    verdict(ok, format!("errors with shortcut in top-10: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 5

fn loss_of(anchors: &[Vec<f64>], positives: &[Vec<f64>], owners: &[PairOwner], tau: f64) -> f64 {
    let mut t = Tape::new();
    let a = t.constant(Tensor::from_rows(anchors).unwrap());
    let p = t.constant(Tensor::from_rows(positives).unwrap());
    let l = maskcl::maskcl_loss(&mut t, a, p, owners, tau).unwrap();
    t.value(l).item()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn c5_maskcl() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let one = PairOwner { anchor: 0, mask_index: 0 };

    let a = unit(&mut rng, 6);
    let p = unit(&mut rng, 6);
    let single = loss_of(&[a], &[p], &[one], 0.1);

    let mut identical_err = 0.0f64;
    for b in 2..=8 {
        let v = unit(&mut rng, 5);
        let owners: Vec<PairOwner> = (0..b).map(|i| PairOwner { anchor: i, mask_index: 0 }).collect();
        let l = loss_of(&vec![v.clone(); b], &vec![v.clone(); b], &owners, 0.1);
        identical_err = identical_err.max((l - (b as f64).ln()).abs());
    }

    let tau = 0.3;
    let (a1, a2, p1, p2) = (unit(&mut rng, 4), unit(&mut rng, 4), unit(&mut rng, 4), unit(&mut rng, 4));
    let owners = [one, PairOwner { anchor: 1, mask_index: 0 }];
    let got = loss_of(&[a1.clone(), a2.clone()], &[p1.clone(), p2.clone()], &owners, tau);
    let s = |x: &[f64], y: &[f64]| (dot(x, y) / tau).exp();
    let want = (-(s(&p1, &a1) / (s(&p1, &a1) + s(&p1, &a2))).ln()
        - (s(&p2, &a2) / (s(&p2, &a1) + s(&p2, &a2))).ln()
        - (s(&a1, &p1) / (s(&a1, &p1) + s(&a1, &p2))).ln()
        - (s(&a2, &p2) / (s(&a2, &p1) + s(&a2, &p2))).ln())
        / 4.0;
    let hand_err = (got - want).abs();

    verdict(
        single == 0.0 && identical_err <= 1e-6 && hand_err <= 1e-10,
        format!("single pair {single:e}; |L - log B| max {identical_err:.1e}; B=2 hand case err {hand_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 6-8

fn anti_test_runs() -> Vec<(stages::PipelineReport, f64)> {
    SEEDS
        .iter()
        .map(|&seed| {
            let mut cfg = RunConfig::load(&configs_dir().join("demo.json")).unwrap();
            cfg.seed = seed;
            let dir = tempfile::tempdir().unwrap();
            let t0 = Instant::now();
            let report = stages::pipeline(&cfg, dir.path()).unwrap();
            (report, t0.elapsed().as_secs_f64())
        })
        .collect()
}

fn c6_debiasing(runs: &[(stages::PipelineReport, f64)]) -> Verdict {
    let n = runs.len() as f64;
    let d_wga = runs
        .iter()
        .map(|(r, _)| r.guarded.metrics.worst_group_accuracy - r.baseline.worst_group_accuracy)
        .sum::<f64>()
        / n;
    let d_acc = runs
        .iter()
        .map(|(r, _)| r.guarded.metrics.accuracy - r.baseline.accuracy)
        .sum::<f64>()
        / n;
    let slowest = runs.iter().map(|(_, t)| *t).fold(0.0, f64::max);
    let per: Vec<String> = runs
        .iter()
        .map(|(r, _)| {
            format!(
                "a*={} wga {:.3}->{:.3} acc {:.3}->{:.3}",
                r.guarded.alpha,
                r.baseline.worst_group_accuracy,
                r.guarded.metrics.worst_group_accuracy,
                r.baseline.accuracy,
                r.guarded.metrics.accuracy
            )
        })
        .collect();
    verdict(
        d_wga >= 0.10 && d_acc >= 0.03 && slowest < 300.0,
        format!(
            "mean dWGA {d_wga:+.3}, mean dACC {d_acc:+.3}, slowest pipeline {slowest:.0}s [{}]",
            per.join("; ")
        ),
    )
}

fn c7_mstps(runs: &[(stages::PipelineReport, f64)]) -> Verdict {
    let pairs: Vec<(f64, f64)> = runs
        .iter()
        .map(|(r, _)| (r.baseline.mstps, r.guarded.metrics.mstps))
        .collect();
    verdict(
        pairs.iter().all(|(e, g)| g < e),
        format!(
            "MSTPS erm -> guarded: {}",
            pairs
                .iter()
                .map(|(e, g)| format!("{e:.3}->{g:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn guardrail(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_guardrail")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn metrics_block(report: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    serde_json::to_string(&v["metrics"]).unwrap()
}

fn c8_in_distribution() -> Verdict {
    let cfg_path = configs_dir().join("in_distribution.json");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    guardrail(&["pipeline", "--config", &s(&cfg_path), "--out-dir", &s(d)]);
    let report: stages::PipelineReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let model = d.join("model.json");
    let test = d.join("data/test.jsonl");
    let (erm, sg) = (d.join("eval_erm"), d.join("eval_sg"));
    guardrail(&["eval", "--model", &s(&model), "--test-file", &s(&test), "--out-dir", &s(&erm)]);
    guardrail(&[
        "eval",
        "--model",
        &s(&model),
        "--adapter",
        &s(&d.join("adapter.calibrated.json")),
        "--test-file",
        &s(&test),
        "--out-dir",
        &s(&sg),
    ]);
    let identical = metrics_block(&erm.join("report.json")) == metrics_block(&sg.join("report.json"));
    let pipeline_identical = report.baseline == report.guarded.metrics;
    verdict(
        report.calibration.alpha == 0.0 && identical && pipeline_identical,
        format!(
            "alpha* = {}, support accuracies {:.3?}, eval metrics identical: {identical}",
            report.calibration.alpha, report.calibration.accuracies
        ),
    )
}

// ---------------------------------------------------------------- 9

fn c9_blending() -> Verdict {
    let model = ClassifierModel::new(EncoderConfig::desk(40, 3, 9)).unwrap();
    let lora = randomized_adapter(&model, 4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bit_equal = true;
    for _ in 0..20 {
        let n = rng.random_range(1..20);
        let mut ids = vec![CLS];
        ids.extend((0..n).map(|_| rng.random_range(4..40)));
        let x = EncodedInput {
            tokens: vec![String::new(); n],
            ids,
            label: None,
        };
        let base = model.forward(&x, None).unwrap();
        let zero = model.forward(&x, Some(Blend::new(&lora, 0.0).unwrap())).unwrap();
        bit_equal &= base == zero;
    }
    let mut worst = 0.0f64;
    let cfg = model.config();
    for (layer, slot) in adapter::target_slots(cfg) {
        let name = linear_name(layer, slot);
        let w_t = model.linear_weight(layer, slot);
        let dist = |alpha: f64| {
            let w = effective_weight(w_t, &lora, &name, alpha).unwrap();
            w.values()
                .iter()
                .zip(w_t.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let full = dist(1.0);
        for i in 0..=10 {
            let alpha = i as f64 / 10.0;
            worst = worst.max((dist(alpha) - alpha * full).abs());
        }
    }
    verdict(
        bit_equal && worst <= 1e-12,
        format!("alpha=0 forward bit-equal: {bit_equal}; worst linearity deviation {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 10

fn c10_lambda() -> Verdict {
    const Z99: f64 = 2.5758293035489;
    let reg = ShortcutRegistry::builtin();
    let mut ok = true;
    let mut worst_z = 0.0f64;
    for &c in &[2usize, 3, 5] {
        let spec = CorpusSpec::pseudo(c, 100, c as u64);
        let clean = benchgen::gen_corpus(&spec, 2000 * c, 11).unwrap();
        for &lambda in &[0.6, 0.8, 1.0] {
            for reversed in [false, true] {
                let sc = ShortcutSpec::single_token("honestly", lambda);
                let ds = benchgen::inject(&clean, &sc, reversed, 12, &reg).unwrap();
                for class in 0..c {
                    let rank = if reversed { c - 1 - class } else { class };
                    let p = lambda * rank as f64 / (c - 1) as f64;
                    let members: Vec<_> = ds.examples.iter().filter(|e| e.label == class).collect();
                    let n = members.len() as f64;
                    let k = members.iter().filter(|e| e.shortcut_present).count() as f64;
                    let sd = (n * p * (1.0 - p)).sqrt();
                    if sd == 0.0 {
                        ok &= k == n * p;
                    } else {
                        let z = (k - n * p).abs() / sd;
                        worst_z = worst_z.max(z);
                        ok &= z <= Z99;
                    }
                    ok &= members.len() == 2000;
                }
            }
        }
    }
    let table: Vec<f64> = (0..5).map(|c| benchgen::occurrence_probability(1.0, c, 5, false)).collect();
    let table_ok = table == [0.0, 0.25, 0.5, 0.75, 1.0];
    verdict(
        ok && table_ok,
        format!("worst |z| {worst_z:.2} (99% bound {Z99:.3}); C=5 lambda=1 probabilities {table:?}"),
    )
}

// ---------------------------------------------------------------- 11

fn c11_theory() -> Verdict {
    let t0 = Instant::now();
    let rows = theorylab::sweep(200, 8, "identity", 11).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let count = |f: &dyn Fn(&theorylab::SweepRow) -> bool| rows.iter().filter(|r| f(r)).count();
    let dpi = count(&|r| r.dpi_ok);
    let ord = count(&|r| r.ordering_ok);
    let fano = count(&|r| r.fano_ok);
    let gap_checked = count(&|r| r.gap_ok.is_some());
    let gap = count(&|r| r.gap_ok == Some(true));
    let n = rows.len();
    verdict(
        n == 200 && dpi == n && ord == n && fano == n && gap == gap_checked && gap_checked > 0 && secs < 30.0,
        format!("{n} chains: dpi {dpi}, ordering {ord}, fano {fano}, gap {gap}/{gap_checked}; {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- 12

fn c12_determinism() -> Verdict {
    let cfg = configs_dir().join("smoke.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        guardrail(&[
            "pipeline",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            d.path().to_str().unwrap(),
        ]);
    }
    let files = [
        "report.json",
        "report.csv",
        "calibration.csv",
        "model.json",
        "adapter.calibrated.json",
        "data/test.jsonl",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).unwrap() != std::fs::read(dirs[1].path().join(f)).unwrap())
        .collect();
    verdict(
        differing.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", files.len()),
    )
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        }
    }
}

fn emit(id: usize, name: &str, v: &Verdict) {
    // Written past the test harness capture so the lines always show.
    let mut out = std::io::stdout().lock();
    let status = if v.pass { "PASS" } else { "FAIL" };
    writeln!(out, "[{status}] {id:>2} {name}: {}", v.detail).unwrap();
    out.flush().unwrap();
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |id: usize, name: &'static str, v: Verdict| {
        emit(id, name, &v);
        results.push((id, name, v));
    };

    record(1, "gradient fidelity", guarded(c1_gradients));
    let grid = catch_unwind(testbed_grid).ok();
    let testbed = |f: fn(&[Vec<TestbedRun>]) -> Verdict| match &grid {
        Some(g) => guarded(|| f(g)),
        None => verdict(false, "testbed training panicked".into()),
    };
    record(2, "shortcut acquisition", testbed(c2_acquisition));
    record(3, "attribution recall", testbed(c3_recall));
    record(4, "misclassification decomposition", testbed(c4_decomposition));
    record(5, "contrastive loss correctness", guarded(c5_maskcl));
    let anti = catch_unwind(anti_test_runs).ok();
    let anti_v = |f: fn(&[(stages::PipelineReport, f64)]) -> Verdict| match &anti {
        Some(r) => guarded(|| f(r)),
        None => verdict(false, "anti-test pipeline panicked".into()),
    };
    record(6, "debiasing efficacy", anti_v(c6_debiasing));
    record(7, "shortcut reliance reduction", anti_v(c7_mstps));
    record(8, "in-distribution preservation", guarded(c8_in_distribution));
    record(9, "blending identity and linearity", guarded(c9_blending));
    record(10, "injection protocol", guarded(c10_lambda));
    record(11, "identification bounds", guarded(c11_theory));
    record(12, "determinism", guarded(c12_determinism));

    let failed: Vec<usize> = results.iter().filter(|(_, _, v)| !v.pass).map(|(id, _, _)| *id).collect();
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len()).unwrap();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}

mod common;

use common::*;
use guardrail::adapter::Blend;
use guardrail::metrics::{group_report, misclass_decomposition, mstps, report_from_predictions, EvalSet};
use guardrail::textenc::ClassifierModel;
use proptest::prelude::*;

fn case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>, usize)> {
    (2usize..5).prop_flat_map(|c| {
        prop::collection::vec((0..c, 0..c, 1..=2 * c), 1..60).prop_map(move |rows| {
            let preds = rows.iter().map(|r| r.0).collect();
            let labels = rows.iter().map(|r| r.1).collect();
            let groups = rows.iter().map(|r| r.2).collect();
            (preds, labels, groups, 2 * c)
        })
    })
}

proptest! {
    #[test]
    fn group_report_matches_a_recount((preds, labels, groups, n_groups) in case()) {
        let r = report_from_predictions(&preds, &labels, &groups, n_groups).unwrap();
        let mut worst = f64::INFINITY;
        for g in 1..=n_groups {
            let idx: Vec<usize> = (0..preds.len()).filter(|&i| groups[i] == g).collect();
            prop_assert_eq!(r.group_sizes[g - 1], idx.len());
            if idx.is_empty() {
                prop_assert_eq!(r.group_accuracy[g - 1], None);
                prop_assert!(r.empty_groups.contains(&g));
            } else {
                let acc = idx.iter().filter(|&&i| preds[i] == labels[i]).count() as f64 / idx.len() as f64;
                prop_assert_eq!(r.group_accuracy[g - 1], Some(acc));
                worst = worst.min(acc);
            }
        }
        prop_assert_eq!(r.worst_group_accuracy, worst);
        let overall = (0..preds.len()).filter(|&i| preds[i] == labels[i]).count() as f64 / preds.len() as f64;
        prop_assert_eq!(r.accuracy, overall);
        prop_assert!(r.worst_group_accuracy <= r.accuracy + 1e-15);
    }
}

fn eval_set(seed: u64) -> (ClassifierModel, EvalSet) {
    let corpus = cue_corpus(60, 2, seed);
    let vocab = vocab_for(&corpus);
    let inputs = encode(&corpus, &vocab, 16);
    let groups = corpus
        .iter()
        .enumerate()
        .map(|(i, (_, y))| 2 * (1 - y) + 1 + (i % 2))
        .collect();
    let model = ClassifierModel::new(small_config(vocab.len(), 2, seed)).unwrap();
    (model, EvalSet { inputs, groups, n_groups: 4 })
}

#[test]
fn mstps_is_bounded_and_monotone_in_k() {
    let (model, set) = eval_set(1);
    let lora = active_adapter(&model, 2, 1, 1.0);
    for blend in [None, Some(Blend::new(&lora, 0.6).unwrap())] {
        let mut last = vec![0.0; set.inputs.len()];
        for k in 1..=6 {
            let r = mstps(&model, blend, &set.inputs, k).unwrap();
            assert!((0.0..=1.0).contains(&r.mean));
            for (a, b) in r.per_example.iter().zip(&last) {
                assert!(a >= b);
                assert!((0.0..=1.0).contains(a));
            }
            last = r.per_example;
        }
    }
    assert!(mstps(&model, None, &set.inputs, 0).is_err());
}

#[test]
fn mstps_at_zero_alpha_equals_the_base_model() {
    let (model, set) = eval_set(2);
    let lora = active_adapter(&model, 2, 2, 1.0);
    let base = mstps(&model, None, &set.inputs, 3).unwrap();
    let zero = mstps(&model, Some(Blend::new(&lora, 0.0).unwrap()), &set.inputs, 3).unwrap();
    assert_eq!(base, zero);
}

#[test]
fn group_report_agrees_with_predictions() {
    let (model, set) = eval_set(3);
    let g = group_report(&model, None, &set).unwrap();
    let preds: Vec<usize> = guardrail::textenc::predict_batch(&model, &set.inputs, None)
        .unwrap()
        .iter()
        .map(|p| p.class)
        .collect();
    let want = report_from_predictions(&preds, &set.labels().unwrap(), &set.groups, 4).unwrap();
    assert_eq!(g, want);
}

#[test]
fn decomposition_parts_sum_to_the_error_rate() {
    let (model, set) = eval_set(4);
    let d = misclass_decomposition(&model, &set.inputs, &["cue0".to_string()], 3).unwrap();
    assert!((d.with_shortcut + d.without_shortcut - d.total).abs() < 1e-15);
    assert!(d.n_errors_with_shortcut <= d.n_errors);
    let acc = accuracy(&model, &set.inputs);
    assert!((d.total - (1.0 - acc)).abs() < 1e-12);
    let none = misclass_decomposition(&model, &set.inputs, &[], 3).unwrap();
    assert_eq!(none.with_shortcut, 0.0);
}

mod common;

use std::collections::BTreeSet;

use common::{deps, fixture, mock, world};
use molrag_core::backends::{BackendError, CachedBackend, ChatBackend, ChatRequest, MockBackend, MockScript};
use molrag_core::evalharness::{
    load_dataset, macro_f1, read_dataset, run_eval, run_eval_logged, split_overlap, EvalTask, Gold, Judge,
    MetricKind, Schema,
};
use molrag_core::pipeline::{TaskSpec, TraceLog};
use proptest::prelude::*;

fn dili_set() -> molrag_core::evalharness::Dataset {
    load_dataset(&fixture("dili_mini.tsv"), Schema::Toxicity).unwrap()
}

#[test]
fn four_example_fixture_scores_hand_value() {
    let w = world();
    let m = mock("eval_dili.tsv");
    let r = run_eval(&deps(&w, &m, Some(&w.tool)), &dili_set(), &EvalTask::from_id("dili").unwrap(), 4).unwrap();
    // confusion: tp 2, fp 1, fn 0, tn 1 -> F1(pos) 0.8, F1(neg) 2/3
    assert_eq!(r.metric_kind, MetricKind::MacroF1);
    assert!((r.metric.unwrap() - 11.0 / 15.0).abs() < 1e-12);
    assert_eq!((r.n, r.errors, r.per_example.len()), (4, 0, 4));
    let scores: Vec<f64> = r.per_example.iter().map(|e| e.score).collect();
    assert_eq!(scores, vec![1.0, 1.0, 0.0, 1.0]);
}

#[test]
fn parallelism_does_not_change_results() {
    let w = world();
    let ds = dili_set();
    let task = EvalTask::from_id("dili").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, p) in [1, 8].into_iter().enumerate() {
        let m = mock("eval_dili.tsv");
        let log = TraceLog::new(dir.path().join(format!("t{i}.jsonl")));
        let r = run_eval_logged(&deps(&w, &m, Some(&w.tool)), &ds, &task, p, Some(&log)).unwrap();
        let traces = std::fs::read(log.path()).unwrap();
        outputs.push((r, traces));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn warm_cache_makes_no_backend_calls() {
    let w = world();
    let ds = dili_set();
    let task = EvalTask::from_id("dili").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cold = CachedBackend::new(mock("eval_dili.tsv"), dir.path()).unwrap();
    let first = run_eval(&deps(&w, &cold, Some(&w.tool)), &ds, &task, 4).unwrap();
    assert!(cold.inner().calls() > 0);
    let warm = CachedBackend::new(mock("eval_dili.tsv"), dir.path()).unwrap();
    let second = run_eval(&deps(&w, &warm, Some(&w.tool)), &ds, &task, 4).unwrap();
    assert_eq!(warm.inner().calls(), 0);
    assert_eq!(warm.misses(), 0);
    assert_eq!(first, second);
}

struct Flaky;

impl ChatBackend for Flaky {
    fn identity(&self) -> String {
        "flaky".into()
    }
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        if req.user.contains("CN(C)C(=N)NC(=N)N") {
            return Err(BackendError::BackendUnavailable("down".into()));
        }
        mock("eval_dili.tsv").complete(req)
    }
}

#[test]
fn failures_are_counted_not_fatal() {
    let w = world();
    let r = run_eval(&deps(&w, &Flaky, Some(&w.tool)), &dili_set(), &EvalTask::from_id("dili").unwrap(), 2).unwrap();
    assert_eq!((r.n, r.errors, r.per_example.len()), (4, 1, 3));
    assert_eq!(r.n, r.per_example.len() + r.errors);
    let expected = macro_f1(&[true, true, true], &[true, true, false]).unwrap();
    assert_eq!(r.metric, Some(expected));
}

#[test]
fn target_task_averages_both_directions() {
    let w = world();
    let script = "Based on the reports&&most likely to activate\t1. PTGS2\\n2. EGFR\\n3. X\\n4. Y\\n5. Z\n\
                  Based on the reports&&most likely to inhibit\t1. PTGS1\\n2. PTGS2\\n3. CYP2E1\\n4. Q\\n5. R\n\
                  \tAnswer = YES\\nREASON = r\n";
    let m = MockBackend::new(MockScript::parse(script.as_bytes()).unwrap());
    let ds = read_dataset("CC(=O)Nc1ccc(O)cc1\tEGFR\tPTGS1,PTGS2,CYP2E1\n".as_bytes(), Schema::Targets).unwrap();
    let r = run_eval(&deps(&w, &m, None), &ds, &EvalTask::from_id("targets").unwrap(), 1).unwrap();
    assert_eq!(r.errors, 0);
    // activate 1/5, inhibit 3/5
    assert!((r.metric.unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(r.per_example[0].trace_ids.len(), 2);
}

#[test]
fn task_must_fit_schema() {
    let w = world();
    let m = mock("eval_dili.tsv");
    assert!(run_eval(&deps(&w, &m, None), &dili_set(), &EvalTask::from_id("targets").unwrap(), 1).is_err());
    assert!(EvalTask::from_id("nope").is_err());
}

#[test]
fn captions_are_written_for_external_scoring() {
    let w = world();
    let script = "Based on the reports\tA small lipophilic molecule likely to cross.\n\tAnswer = YES\\nREASON = r\n";
    let m = MockBackend::new(MockScript::parse(script.as_bytes()).unwrap());
    let ds = read_dataset("smiles\nCCO\nCC(=O)Nc1ccc(O)cc1\n".as_bytes(), Schema::Captioning).unwrap();
    let r = run_eval(&deps(&w, &m, None), &ds, &EvalTask::from_id("caption-bbbp").unwrap(), 2).unwrap();
    assert_eq!(r.metric, None);
    let mut out = Vec::new();
    r.write_captions(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("CCO\tA small lipophilic molecule likely to cross.\n"));
}

#[test]
fn results_file_lists_metric_and_rows() {
    let w = world();
    let m = mock("eval_dili.tsv");
    let r = run_eval(&deps(&w, &m, Some(&w.tool)), &dili_set(), &EvalTask::from_id("dili").unwrap(), 1).unwrap();
    let mut out = Vec::new();
    r.write_results(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("task\tdili\nmetric\tmacro_f1\nvalue\t0.733333\nn\t4\nerrors\t0\n"));
    assert_eq!(text.lines().filter(|l| l.contains("\tYES\t") || l.contains("\tNO\t")).count(), 4);
}

#[test]
fn overlap_split_rules() {
    let w = world();
    let ds = read_dataset(
        "CC(=O)Nc1ccc(O)cc1\t1\nCCOc1ccc(NC(C)=O)cc1\t0\nCCCCCCCCCCO\t0\n".as_bytes(),
        Schema::Toxicity,
    )
    .unwrap();
    let split = split_overlap(&ds.examples, &w.kg, Some(&w.store), None);
    let smiles = |v: &[molrag_core::evalharness::LabeledExample]| v.iter().map(|e| e.smiles.clone()).collect::<Vec<_>>();
    assert_eq!(smiles(&split.overlap), vec!["CC(=O)Nc1ccc(O)cc1", "CCOc1ccc(NC(C)=O)cc1"]);
    assert_eq!(smiles(&split.no_overlap), vec!["CCCCCCCCCCO"]);
    assert!(split.relaxed);

    let no = MockBackend::new(MockScript::parse("\tAnswer = NO\\nREASON = vague\n".as_bytes()).unwrap());
    let task = TaskSpec::builtin("dili").unwrap();
    let judge = Judge { backend: &no, task: &task };
    let split = split_overlap(&ds.examples, &w.kg, Some(&w.store), Some(&judge));
    assert_eq!(smiles(&split.overlap), vec!["CC(=O)Nc1ccc(O)cc1"]);
    assert!(!split.relaxed);
    assert_eq!(no.calls(), 1);

    let down = MockBackend::new(MockScript::parse("nothing matches\tx\n".as_bytes()).unwrap());
    let split = split_overlap(&ds.examples, &w.kg, Some(&w.store), Some(&Judge { backend: &down, task: &task }));
    assert_eq!(split.judge_failures, 1);
    assert_eq!(split.overlap.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn overlap_split_partitions(picks in prop::collection::vec(0usize..8, 0..12)) {
        let w = world();
        let pool = ["CCO", "CC(=O)Nc1ccc(O)cc1", "CCCCCCCCCCO", "c1ccccc1", "CN(C)C(=N)NC(=N)N", "CCN", "OCC", "CCCl"];
        let rows: String = picks.iter().map(|&i| format!("{}\t1\n", pool[i])).collect();
        let examples = if rows.is_empty() {
            Vec::new()
        } else {
            read_dataset(rows.as_bytes(), Schema::Toxicity).unwrap().examples
        };
        let split = split_overlap(&examples, &w.kg, Some(&w.store), None);
        prop_assert_eq!(split.overlap.len() + split.no_overlap.len(), examples.len());
        let a: BTreeSet<_> = split.overlap.iter().map(|e| e.key.clone()).collect();
        let b: BTreeSet<_> = split.no_overlap.iter().map(|e| e.key.clone()).collect();
        prop_assert!(a.is_disjoint(&b));
        for e in &examples {
            prop_assert!(a.contains(&e.key) || b.contains(&e.key));
        }
        let labelled = examples.iter().all(|e| matches!(e.gold, Gold::Label { value: true }));
        prop_assert!(labelled);
    }
}

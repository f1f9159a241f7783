//! Task datasets, overlap splitting, metrics and batch evaluation.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{parse_yes_no, AliasTable, AnswerFormat};
use crate::annostore::AnnotationStore;
use crate::backends::{ChatBackend, ChatRequest};
use crate::chem::{key_of, CanonicalKey};
use crate::kgstore::{drug_by_key, KnowledgeGraph};
use crate::pipeline::{run_query, Answer, Deps, PipelineTrace, TaskSpec, TraceLog};
use crate::tsv;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("predictions and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown dataset schema {0:?}")]
    UnknownSchema(String),
    #[error("dataset has no usable rows")]
    EmptyDataset,
    #[error("task {task} cannot score {schema} examples")]
    TaskMismatch { task: String, schema: Schema },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Toxicity,
    Targets,
    Captioning,
}

impl FromStr for Schema {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "toxicity" => Ok(Schema::Toxicity),
            "targets" => Ok(Schema::Targets),
            "captioning" => Ok(Schema::Captioning),
            other => Err(EvalError::UnknownSchema(other.to_string())),
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Toxicity => "toxicity",
            Schema::Targets => "targets",
            Schema::Captioning => "captioning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Gold {
    Label { value: bool },
    Targets { activate: BTreeSet<String>, inhibit: BTreeSet<String> },
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub smiles: String,
    pub key: CanonicalKey,
    pub gold: Gold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub examples: Vec<LabeledExample>,
    /// (line number, reason) for every skipped row.
    pub rejected: Vec<(usize, String)>,
}

fn symbol_set(field: &str) -> BTreeSet<String> {
    field
        .split(',')
        .map(|s| s.trim().to_uppercase())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_row(fields: &[String], schema: Schema) -> Result<LabeledExample, String> {
    let smiles = fields.first().map(|s| s.trim()).unwrap_or("");
    let need = match schema {
        Schema::Toxicity => 2,
        Schema::Targets => 3,
        Schema::Captioning => 1,
    };
    if fields.len() < need {
        return Err(format!("expected {need} fields, found {}", fields.len()));
    }
    let gold = match schema {
        Schema::Toxicity => match fields[1].trim() {
            "0" => Gold::Label { value: false },
            "1" => Gold::Label { value: true },
            other => return Err(format!("label must be 0 or 1, found {other:?}")),
        },
        Schema::Targets => {
            let activate = symbol_set(&fields[1]);
            let inhibit = symbol_set(&fields[2]);
            if activate.is_empty() && inhibit.is_empty() {
                return Err("no gold targets".into());
            }
            Gold::Targets { activate, inhibit }
        }
        Schema::Captioning => Gold::None,
    };
    let key = key_of(smiles).map_err(|e| format!("unparseable SMILES {smiles:?}: {e}"))?;
    Ok(LabeledExample {
        smiles: smiles.to_string(),
        key,
        gold,
    })
}

pub fn read_dataset<R: BufRead>(reader: R, schema: Schema) -> Result<Dataset, EvalError> {
    let mut examples = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = tsv::split(&line);
        if lineno == 1 && fields[0].trim().eq_ignore_ascii_case("smiles") {
            continue;
        }
        match parse_row(&fields, schema) {
            Ok(ex) => examples.push(ex),
            Err(reason) => {
                log::warn!("dataset line {lineno}: {reason}");
                rejected.push((lineno, reason));
            }
        }
    }
    if examples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(Dataset {
        schema,
        examples,
        rejected,
    })
}

pub fn load_dataset(path: &Path, schema: Schema) -> Result<Dataset, EvalError> {
    read_dataset(BufReader::new(File::open(path)?), schema)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

pub fn macro_f1(predictions: &[bool], labels: &[bool]) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut m = [[0usize; 2]; 2];
    for (&p, &l) in predictions.iter().zip(labels) {
        m[l as usize][p as usize] += 1;
    }
    let mut total = 0.0;
    for class in [true, false] {
        let c = class as usize;
        let o = 1 - c;
        if m[c][c] + m[c][o] + m[o][c] == 0 {
            log::warn!("class {class} absent from predictions and labels; scored F1 = 0");
        }
        total += f1(m[c][c], m[o][c], m[c][o]);
    }
    Ok(total / 2.0)
}

pub fn precision_at_k(predicted: &[String], gold: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    precision_at_k_with(predicted, gold, k, &AliasTable::default())
}

pub fn precision_at_k_with(
    predicted: &[String],
    gold: &BTreeSet<String>,
    k: usize,
    aliases: &AliasTable,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let gold: BTreeSet<String> = gold.iter().map(|g| aliases.normalize(g)).collect();
    let mut seen = BTreeSet::new();
    let hits = predicted
        .iter()
        .take(k)
        .map(|p| aliases.normalize(p))
        .filter(|p| seen.insert(p.clone()) && gold.contains(p))
        .count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverlapSplit {
    pub overlap: Vec<LabeledExample>,
    pub no_overlap: Vec<LabeledExample>,
    /// True when annotation presence alone decided overlap for some example.
    pub relaxed: bool,
    pub judge_failures: usize,
}

const JUDGE_PROMPT: &str = "You are an expert in chemistry and drug discovery.
Decide whether the following description of a molecule contains enough information to determine {TASK}.

Description: {DESCRIPTION}

You should answer in the following format:

Answer = YES or NO
REASON = YOUR REASON HERE";

pub struct Judge<'a> {
    pub backend: &'a dyn ChatBackend,
    pub task: &'a TaskSpec,
}

impl Judge<'_> {
    fn sufficient(&self, caption: &str) -> Option<bool> {
        let prompt = JUDGE_PROMPT
            .replace("{TASK}", &self.task.description)
            .replace("{DESCRIPTION}", caption);
        let text = match self.backend.complete(&ChatRequest::user(prompt)) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("overlap judge failed: {e}");
                return None;
            }
        };
        match parse_yes_no(&text) {
            Ok(d) => Some(d.value),
            Err(e) => {
                log::warn!("overlap judge answer unparseable: {e}");
                None
            }
        }
    }
}

pub fn split_overlap(
    examples: &[LabeledExample],
    kg: &KnowledgeGraph,
    store: Option<&AnnotationStore>,
    judge: Option<&Judge>,
) -> OverlapSplit {
    let mut split = OverlapSplit::default();
    for ex in examples {
        let in_kg = drug_by_key(kg, &ex.key).is_some();
        let annotated = if in_kg {
            false
        } else {
            match store.and_then(|s| s.lookup_caption(&ex.key)) {
                None => false,
                Some(caption) => match judge.map(|j| j.sufficient(&caption)) {
                    Some(Some(v)) => v,
                    Some(None) => {
                        split.judge_failures += 1;
                        split.relaxed = true;
                        true
                    }
                    None => {
                        split.relaxed = true;
                        true
                    }
                },
            }
        };
        if in_kg || annotated {
            split.overlap.push(ex.clone());
        } else {
            split.no_overlap.push(ex.clone());
        }
    }
    split
}

/// What an evaluation runs per example.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTask {
    Single(TaskSpec),
    /// Activation and inhibition queries, scored separately and averaged.
    Targets { activate: TaskSpec, inhibit: TaskSpec },
}

impl EvalTask {
    /// Builtin task ids plus `targets` for the two-direction target task.
    pub fn from_id(id: &str) -> Result<Self, EvalError> {
        if id == "targets" {
            let get = |i| TaskSpec::builtin(i).expect("builtin target task");
            return Ok(EvalTask::Targets {
                activate: get("targets-activate"),
                inhibit: get("targets-inhibit"),
            });
        }
        TaskSpec::builtin(id)
            .map(EvalTask::Single)
            .ok_or_else(|| EvalError::UnknownTask(id.to_string()))
    }

    pub fn id(&self) -> &str {
        match self {
            EvalTask::Single(t) => &t.id,
            EvalTask::Targets { .. } => "targets",
        }
    }

    fn check(&self, schema: Schema) -> Result<(), EvalError> {
        let ok = match (self, schema) {
            (EvalTask::Single(t), Schema::Toxicity) => t.answer_format == AnswerFormat::YesNo,
            (EvalTask::Single(t), Schema::Captioning) => t.answer_format == AnswerFormat::Caption,
            (EvalTask::Targets { .. }, Schema::Targets) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(EvalError::TaskMismatch {
                task: self.id().to_string(),
                schema,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub smiles: String,
    pub predicted: String,
    pub expected: String,
    /// 1/0 for labels, mean precision for targets, 1 for captions.
    pub score: f64,
    pub trace_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MacroF1,
    MeanPrecision,
    /// Captions are scored externally.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: String,
    pub metric_kind: MetricKind,
    pub metric: Option<f64>,
    pub n: usize,
    pub errors: usize,
    pub per_example: Vec<ExampleResult>,
    /// "index: message" for every failed example.
    pub failures: Vec<String>,
}

struct Outcome {
    result: Result<ExampleResult, String>,
    prediction: Option<bool>,
    traces: Vec<PipelineTrace>,
}

fn answer_targets(trace: &PipelineTrace) -> Result<Vec<String>, String> {
    match &trace.answer {
        Answer::Targets(t) => Ok(t.clone()),
        other => Err(other.summary()),
    }
}

fn evaluate_one(deps: &Deps, ex: &LabeledExample, task: &EvalTask) -> Outcome {
    let mut traces = Vec::new();
    let mut run = |spec: &TaskSpec| -> Result<PipelineTrace, String> {
        let t = run_query(deps, &ex.smiles, spec).map_err(|e| e.to_string())?;
        traces.push(t.clone());
        Ok(t)
    };
    let mut prediction = None;
    let result = (|| match (task, &ex.gold) {
        (EvalTask::Single(spec), Gold::Label { value }) => {
            let t = run(spec)?;
            match &t.answer {
                Answer::YesNo { value: p, .. } => {
                    prediction = Some(*p);
                    Ok(ExampleResult {
                        smiles: ex.smiles.clone(),
                        predicted: t.answer.summary(),
                        expected: if *value { "YES" } else { "NO" }.into(),
                        score: (*p == *value) as u8 as f64,
                        trace_ids: vec![t.trace_id.clone()],
                    })
                }
                other => Err(other.summary()),
            }
        }
        (EvalTask::Single(spec), Gold::None) => {
            let t = run(spec)?;
            match &t.answer {
                Answer::Caption(c) => Ok(ExampleResult {
                    smiles: ex.smiles.clone(),
                    predicted: c.clone(),
                    expected: String::new(),
                    score: 1.0,
                    trace_ids: vec![t.trace_id.clone()],
                }),
                other => Err(other.summary()),
            }
        }
        (EvalTask::Targets { activate, inhibit }, Gold::Targets { activate: ga, inhibit: gi }) => {
            let mut scores = Vec::new();
            let mut predicted = Vec::new();
            let mut ids = Vec::new();
            for (spec, gold, label) in [(activate, ga, "activate"), (inhibit, gi, "inhibit")] {
                if gold.is_empty() {
                    continue;
                }
                let k = match spec.answer_format {
                    AnswerFormat::TargetList { k } => k,
                    _ => 5,
                };
                let t = run(spec)?;
                let list = answer_targets(&t)?;
                scores.push(precision_at_k(&list, gold, k).map_err(|e| e.to_string())?);
                predicted.push(format!("{label}: {}", list.join(",")));
                ids.push(t.trace_id.clone());
            }
            let expected = format!(
                "activate: {}; inhibit: {}",
                ga.iter().cloned().collect::<Vec<_>>().join(","),
                gi.iter().cloned().collect::<Vec<_>>().join(",")
            );
            Ok(ExampleResult {
                smiles: ex.smiles.clone(),
                predicted: predicted.join("; "),
                expected,
                score: scores.iter().sum::<f64>() / scores.len() as f64,
                trace_ids: ids,
            })
        }
        _ => Err("example does not fit the task".to_string()),
    })();
    Outcome {
        result,
        prediction,
        traces,
    }
}

pub fn run_eval(deps: &Deps, dataset: &Dataset, task: &EvalTask, parallelism: usize) -> Result<EvalResult, EvalError> {
    run_eval_logged(deps, dataset, task, parallelism, None)
}

/// Like [`run_eval`], appending every trace to `log` in dataset order.
pub fn run_eval_logged(
    deps: &Deps,
    dataset: &Dataset,
    task: &EvalTask,
    parallelism: usize,
    log: Option<&TraceLog>,
) -> Result<EvalResult, EvalError> {
    if dataset.examples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    task.check(dataset.schema)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| io::Error::other(e.to_string()))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        dataset
            .examples
            .par_iter()
            .map(|ex| evaluate_one(deps, ex, task))
            .collect()
    });

    let mut per_example = Vec::new();
    let mut failures = Vec::new();
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for (i, (o, ex)) in outcomes.into_iter().zip(&dataset.examples).enumerate() {
        if let Some(log) = log {
            for t in &o.traces {
                log.append(t)?;
            }
        }
        match o.result {
            Ok(r) => {
                if let (Some(p), Gold::Label { value }) = (o.prediction, &ex.gold) {
                    predictions.push(p);
                    labels.push(*value);
                }
                per_example.push(r);
            }
            Err(e) => {
                log::warn!("example {i} ({}): {e}", ex.smiles);
                failures.push(format!("{i}: {e}"));
            }
        }
    }

    let (metric_kind, metric) = match dataset.schema {
        Schema::Toxicity => (
            MetricKind::MacroF1,
            macro_f1(&predictions, &labels).ok(),
        ),
        Schema::Targets => (
            MetricKind::MeanPrecision,
            (!per_example.is_empty())
                .then(|| per_example.iter().map(|r| r.score).sum::<f64>() / per_example.len() as f64),
        ),
        Schema::Captioning => (MetricKind::None, None),
    };
    Ok(EvalResult {
        task: task.id().to_string(),
        metric_kind,
        metric,
        n: dataset.examples.len(),
        errors: failures.len(),
        per_example,
        failures,
    })
}

impl EvalResult {
    /// Header lines followed by one TSV row per scored example.
    pub fn write_results<W: Write>(&self, mut out: W) -> io::Result<()> {
        let kind = match self.metric_kind {
            MetricKind::MacroF1 => "macro_f1",
            MetricKind::MeanPrecision => "mean_precision_at_k",
            MetricKind::None => "none",
        };
        writeln!(out, "task\t{}", self.task)?;
        writeln!(out, "metric\t{kind}")?;
        match self.metric {
            Some(m) => writeln!(out, "value\t{m:.6}")?,
            None => writeln!(out, "value\t")?,
        }
        writeln!(out, "n\t{}", self.n)?;
        writeln!(out, "errors\t{}", self.errors)?;
        writeln!(out)?;
        writeln!(out, "smiles\tpredicted\texpected\tscore\ttraces")?;
        for r in &self.per_example {
            writeln!(
                out,
                "{}",
                tsv::join(&[
                    r.smiles.clone(),
                    r.predicted.clone(),
                    r.expected.clone(),
                    format!("{:.4}", r.score),
                    r.trace_ids.join(","),
                ])
            )?;
        }
        Ok(())
    }

    /// `smiles<TAB>caption` rows for external scoring.
    pub fn write_captions<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "smiles\tcaption")?;
        for r in &self.per_example {
            writeln!(out, "{}", tsv::join(&[r.smiles.as_str(), r.predicted.as_str()]))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn list(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn macro_f1_fixtures() {
        let labels = [true, true, false, false];
        assert_eq!(macro_f1(&labels, &labels).unwrap(), 1.0);
        let all_pos = [true; 4];
        assert!((macro_f1(&all_pos, &labels).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[true], &[true]).unwrap(), 0.5);
        assert!(matches!(macro_f1(&[true], &[]), Err(EvalError::LengthMismatch(1, 0))));
        assert!(matches!(macro_f1(&[], &[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn precision_fixtures() {
        let gold = set(&["EGFR", "ERBB2", "DRD2", "HTR2A", "ADRB1"]);
        let p = precision_at_k(&list(&["EGFR", "X", "drd2", "Y", "Z"]), &gold, 5).unwrap();
        assert_eq!(p, 0.4);
        let all = list(&["EGFR", "ERBB2", "DRD2", "HTR2A", "ADRB1"]);
        assert_eq!(precision_at_k(&all, &gold, 5).unwrap(), 1.0);
        assert_eq!(precision_at_k(&list(&["EGFR", "X", "Y"]), &gold, 5).unwrap(), 0.2);
        assert!(matches!(precision_at_k(&all, &BTreeSet::new(), 5), Err(EvalError::EmptyGold)));
    }

    #[test]
    fn precision_uses_aliases() {
        let mut aliases = AliasTable::default();
        aliases.insert("HER2", "ERBB2");
        let gold = set(&["ERBB2"]);
        assert_eq!(precision_at_k_with(&list(&["her2"]), &gold, 1, &aliases).unwrap(), 1.0);
    }

    #[test]
    fn dataset_rows() {
        let ds = read_dataset("smiles\tlabel\nCCO\t1\nCC\t0\n".as_bytes(), Schema::Toxicity).unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.examples[0].gold, Gold::Label { value: true });
        let ds = read_dataset("CCO\tEGFR,HER2\tDRD2\n".as_bytes(), Schema::Targets).unwrap();
        assert_eq!(
            ds.examples[0].gold,
            Gold::Targets {
                activate: set(&["EGFR", "HER2"]),
                inhibit: set(&["DRD2"])
            }
        );
        let ds = read_dataset("CCO\t1\nCC\t2\nC1CC\t0\n".as_bytes(), Schema::Toxicity).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.rejected.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 3]);
        assert!(ds.rejected[0].1.contains("\"2\""));
        assert!(matches!(
            read_dataset("CC\t2\n".as_bytes(), Schema::Toxicity),
            Err(EvalError::EmptyDataset)
        ));
        assert!(matches!("scaffold".parse::<Schema>(), Err(EvalError::UnknownSchema(_))));
    }

    fn brute_f1(pred: &[bool], gold: &[bool], class: bool) -> f64 {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (&p, &g) in pred.iter().zip(gold) {
            match (p == class, g == class) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn macro_f1_matches_confusion_oracle(pairs in prop::collection::vec(any::<(bool, bool)>(), 1..60)) {
            let (p, g): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let expected = (brute_f1(&p, &g, true) + brute_f1(&p, &g, false)) / 2.0;
            prop_assert!((macro_f1(&p, &g).unwrap() - expected).abs() < 1e-12);
        }

        #[test]
        fn precision_monotone_in_gold_hits(
            predicted in prop::collection::vec("[A-E]{1,2}", 0..8),
            gold in prop::collection::btree_set("[A-E]{1,2}", 1..6),
            k in 1usize..6,
        ) {
            let before = precision_at_k(&predicted, &gold, k).unwrap();
            if predicted.len() < k {
                let extra = gold.iter().next().unwrap().clone();
                let mut longer = predicted.clone();
                longer.push(extra);
                prop_assert!(precision_at_k(&longer, &gold, k).unwrap() >= before);
            }
        }
    }
}

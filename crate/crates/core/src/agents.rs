//! Agent prompt templates and parsers for agent responses.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};

use crate::kgstore::{top_k_related, KnowledgeGraph, TwoHopPath};
use crate::tsv;

pub const TARGET_SMILES: &str = "TARGET_SMILES";
pub const ANCHOR_SMILES: &str = "ANCHOR_SMILES";
pub const ANCHOR_NAME: &str = "ANCHOR_NAME";
pub const ANCHOR_TANIMOTO: &str = "ANCHOR_TANIMOTO";
pub const RELATED_DRUGS: &str = "RELATED_DRUGS";
pub const RELATED_TANIMOTO: &str = "RELATED_TANIMOTO";
pub const TASK_DESCRIPTION: &str = "TASK_DESCRIPTION";
pub const DESCRIPTION: &str = "DESCRIPTION";
pub const TWO_HOP_PATHS: &str = "TWO_HOP_PATHS";
pub const MU_REPORT: &str = "MU_REPORT";
pub const DRUGREL_REPORT: &str = "DRUGREL_REPORT";
pub const BIOREL_REPORT: &str = "BIOREL_REPORT";
pub const TASK_AND_FORMAT: &str = "TASK_AND_FORMAT";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("prompt context is missing placeholder {0}")]
    MissingPlaceholder(String),
    #[error("could not parse response: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    MolannPlanner,
    KgPlanner,
    Drugrel,
    Biorel,
    Mu,
    Prediction,
}

impl AgentId {
    pub const ALL: [AgentId; 6] = [
        AgentId::MolannPlanner,
        AgentId::KgPlanner,
        AgentId::Drugrel,
        AgentId::Biorel,
        AgentId::Mu,
        AgentId::Prediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::MolannPlanner => "molann_planner",
            AgentId::KgPlanner => "kg_planner",
            AgentId::Drugrel => "drugrel",
            AgentId::Biorel => "biorel",
            AgentId::Mu => "mu",
            AgentId::Prediction => "prediction",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: AgentId,
    pub body: &'static str,
}

impl PromptTemplate {
    pub fn get(id: AgentId) -> PromptTemplate {
        let body = match id {
            AgentId::MolannPlanner => include_str!("../templates/molann_planner.txt"),
            AgentId::KgPlanner => include_str!("../templates/kg_planner.txt"),
            AgentId::Drugrel => include_str!("../templates/drugrel.txt"),
            AgentId::Biorel => include_str!("../templates/biorel.txt"),
            AgentId::Mu => include_str!("../templates/mu.txt"),
            AgentId::Prediction => include_str!("../templates/prediction.txt"),
        };
        PromptTemplate { id, body }
    }

    /// Distinct placeholder names in the body.
    pub fn placeholders(&self) -> BTreeSet<&'static str> {
        segments(self.body)
            .into_iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(name),
                Segment::Text(_) => None,
            })
            .collect()
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b == b'_')
}

fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                out.push(Segment::Text(&rest[..open]));
                out.push(Segment::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Segment::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    out.push(Segment::Text(rest));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Number(f64),
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Number(x) => format!("{x:.4}"),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

pub type PromptContext = BTreeMap<&'static str, Value>;

/// Substitutes every `{NAME}` slot in one pass; values are never re-scanned.
pub fn render_prompt(template: &PromptTemplate, context: &PromptContext) -> Result<String, AgentError> {
    let mut out = String::with_capacity(template.body.len() * 2);
    for segment in segments(template.body) {
        match segment {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                let value = context
                    .get(name)
                    .ok_or_else(|| AgentError::MissingPlaceholder(name.to_string()))?;
                out.push_str(&value.render());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerDecision {
    pub value: bool,
    pub reason: String,
    pub forced: bool,
}

impl PlannerDecision {
    pub fn forced(value: bool, reason: impl Into<String>) -> Self {
        PlannerDecision {
            value,
            reason: reason.into(),
            forced: true,
        }
    }
}

/// `key = value` with a case-insensitive key and any spacing around `=`.
fn keyed_line<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim().trim_matches(|c| c == '*' || c == '#').trim();
    k.eq_ignore_ascii_case(key).then(|| v.trim())
}

pub fn parse_yes_no(text: &str) -> Result<PlannerDecision, AgentError> {
    let mut value = None;
    let mut reason = String::new();
    for line in text.lines() {
        if let Some(v) = keyed_line(line, "answer") {
            if value.is_none() {
                let token: String = v
                    .chars()
                    .take_while(|c| c.is_ascii_alphabetic())
                    .collect::<String>()
                    .to_ascii_uppercase();
                value = match token.as_str() {
                    "YES" => Some(true),
                    "NO" => Some(false),
                    _ => None,
                };
            }
        } else if let Some(r) = keyed_line(line, "reason") {
            if reason.is_empty() {
                reason = r.to_string();
            }
        }
    }
    let value = value.ok_or_else(|| AgentError::Parse("no `Answer = YES|NO` line".into()))?;
    Ok(PlannerDecision {
        value,
        reason,
        forced: false,
    })
}

/// Optional synonym table mapping protein names to canonical symbols.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable(HashMap<String, String>);

impl AliasTable {
    /// Reads `alias<TAB>symbol` rows.
    pub fn load<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut map = HashMap::new();
        for line in reader.lines() {
            let line = line?;
            let f = tsv::split(&line);
            if f.len() >= 2 && !f[0].trim().is_empty() {
                map.insert(f[0].trim().to_uppercase(), f[1].trim().to_uppercase());
            }
        }
        Ok(AliasTable(map))
    }

    pub fn insert(&mut self, alias: &str, symbol: &str) {
        self.0.insert(alias.to_uppercase(), symbol.to_uppercase());
    }

    pub fn normalize(&self, name: &str) -> String {
        let upper = name.trim().to_uppercase();
        self.0.get(&upper).cloned().unwrap_or(upper)
    }
}

fn list_item(line: &str) -> Option<&str> {
    let line = line.trim_start();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix('.')?;
    // drop trailing commentary such as "EGFR: reason" or "EGFR - reason"
    let name = rest
        .split([':', '('])
        .next()
        .unwrap_or("")
        .split(" - ")
        .next()
        .unwrap_or("")
        .trim()
        .trim_matches('*')
        .trim();
    (!name.is_empty()).then_some(name)
}

pub fn parse_target_list(text: &str, k: usize) -> Result<Vec<String>, AgentError> {
    parse_target_list_with(text, k, &AliasTable::default())
}

pub fn parse_target_list_with(
    text: &str,
    k: usize,
    aliases: &AliasTable,
) -> Result<Vec<String>, AgentError> {
    let items: Vec<&str> = text.lines().filter_map(list_item).collect();
    if items.is_empty() {
        return Err(AgentError::Parse("no numbered list items".into()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for item in items {
        let symbol = aliases.normalize(item);
        if seen.insert(symbol.clone()) {
            out.push(symbol);
        }
    }
    out.truncate(k);
    Ok(out)
}

pub fn display_name(kg: &KnowledgeGraph, id: &str) -> String {
    kg.entity(id).map(|e| e.name.clone()).unwrap_or_else(|| id.to_string())
}

/// Paths ordered by the rank of their far drug, truncated to `cap`.
pub fn rank_paths(paths: &[TwoHopPath], cap: usize) -> Vec<TwoHopPath> {
    let rank: HashMap<String, usize> = top_k_related(paths, usize::MAX)
        .into_iter()
        .enumerate()
        .map(|(i, (drug, _))| (drug, i))
        .collect();
    let mut ordered: Vec<&TwoHopPath> = paths.iter().collect();
    ordered.sort_by_key(|p| rank[&p.drug]);
    ordered.into_iter().take(cap).cloned().collect()
}

pub fn path_line(kg: &KnowledgeGraph, p: &TwoHopPath) -> String {
    format!(
        "({}, {}, {}, {}, {})",
        display_name(kg, &p.anchor),
        p.rel1,
        display_name(kg, &p.mid),
        p.rel2,
        display_name(kg, &p.drug)
    )
}

/// One `(Drug A, relation, Entity, relation, Drug B)` line per path using
/// entity names. Over the cap, paths to the highest-ranked drugs are kept.
pub fn format_paths(kg: &KnowledgeGraph, paths: &[TwoHopPath], cap: usize) -> String {
    rank_paths(paths, cap)
        .iter()
        .map(|p| path_line(kg, p))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnswerFormat {
    YesNo,
    TargetList { k: usize },
    Caption,
}

impl AnswerFormat {
    /// Instructions appended to the task text in the prediction prompt.
    pub fn instructions(self) -> String {
        match self {
            AnswerFormat::YesNo => "You should answer in the following format:\n\n\
                 Answer = YES or NO\n\
                 REASON = YOUR REASON HERE"
                .to_string(),
            AnswerFormat::TargetList { k } => {
                let mut s = format!(
                    "You should answer with exactly {k} protein symbols, most likely first, in the following format:\n\n"
                );
                for i in 1..=k {
                    s.push_str(&format!("{i}. PROTEIN SYMBOL\n"));
                }
                s.pop();
                s
            }
            AnswerFormat::Caption => "DO NOT WRITE MORE THAN 300 TOKENS.".to_string(),
        }
    }

    /// Appended to the prompt when a response could not be parsed.
    pub fn reminder(self) -> String {
        format!(
            "\n\nYOUR PREVIOUS RESPONSE COULD NOT BE PARSED. {}",
            self.instructions()
        )
    }
}

/// Reminder used when a planner response lacks an `Answer = YES|NO` line.
pub fn planner_reminder() -> String {
    AnswerFormat::YesNo.reminder()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: AgentId,
    pub text: String,
    pub elapsed_ms: u64,
}

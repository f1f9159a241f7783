//! Query orchestration: planning, the knowledge-graph team, the molecule
//! understanding agent and the prediction agent, with a full call trace.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{
    self, parse_target_list, parse_yes_no, path_line, planner_reminder, rank_paths,
    render_prompt, AgentError, AgentId, AgentReport, AnswerFormat, PlannerDecision,
    PromptContext, PromptTemplate, Value,
};
use crate::annostore::AnnotationStore;
use crate::backends::{BackendError, ChatBackend, ChatRequest};
use crate::chem::{key_of, CanonicalKey, ChemError, Molecule};
use crate::embed::{AnchorResult, EmbeddingProvider};
use crate::kgstore::{top_k_related, two_hop_paths, KgError, KnowledgeGraph, TwoHopPath};
use crate::tsv;

pub const NO_RELATED_DRUGS: &str = "No related drugs found in the knowledge graph.";
pub const NO_REPORT: &str = "No report available.";
pub const SIMILARITY_UNAVAILABLE: &str = "similarity unavailable";
pub const NO_DESCRIPTION: &str = "No description available.";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error("{agent} call failed: {source}")]
    Backend {
        agent: AgentId,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    /// Fills the task slot of every agent prompt.
    pub description: String,
    /// Leads the task-and-format slot of the prediction prompt.
    pub instruction: String,
    pub answer_format: AnswerFormat,
}

impl TaskSpec {
    fn new(id: &str, description: &str, instruction: &str, answer_format: AnswerFormat) -> Self {
        TaskSpec {
            id: id.into(),
            description: description.into(),
            instruction: instruction.into(),
            answer_format,
        }
    }

    pub fn builtins() -> Vec<TaskSpec> {
        let yes_no = AnswerFormat::YesNo;
        let top5 = AnswerFormat::TargetList { k: 5 };
        let caption = AnswerFormat::Caption;
        vec![
            TaskSpec::new(
                "dili",
                "whether drug-induced liver injury is caused by the molecule",
                "determine whether the molecule is likely to cause drug-induced liver injury.",
                yes_no,
            ),
            TaskSpec::new(
                "herg",
                "whether the human ether-a-go-go related gene (hERG) channel is blocked by the molecule",
                "determine whether the molecule blocks the hERG channel.",
                yes_no,
            ),
            TaskSpec::new(
                "skin",
                "whether a skin reaction is induced by the molecule",
                "determine whether the molecule induces a skin reaction.",
                yes_no,
            ),
            TaskSpec::new(
                "carcinogens",
                "whether carcinogenic properties are present in the molecule",
                "determine whether the molecule has carcinogenic properties.",
                yes_no,
            ),
            TaskSpec::new(
                "targets-activate",
                "the top 5 proteins that are most likely to be activated by the molecule",
                "generate the top 5 proteins that the molecule is most likely to activate.",
                top5,
            ),
            TaskSpec::new(
                "targets-inhibit",
                "the top 5 proteins that are most likely to be inhibited by the molecule",
                "generate the top 5 proteins that the molecule is most likely to inhibit.",
                top5,
            ),
            TaskSpec::new(
                "caption-bbbp",
                "the blood-brain barrier penetration of the molecule",
                "write a description of the molecule focused on its ability to penetrate the blood-brain barrier.",
                caption,
            ),
            TaskSpec::new(
                "caption-sider",
                "the side effects, by organ system, of the molecule",
                "write a description of the molecule focused on its likely side effects by organ system.",
                caption,
            ),
            TaskSpec::new(
                "caption-clintox",
                "the clinical trial toxicity and approval prospects of the molecule",
                "write a description of the molecule focused on its toxicity in clinical trials and its FDA approval prospects.",
                caption,
            ),
            TaskSpec::new(
                "caption-bace",
                "the human beta-secretase 1 inhibition of the molecule",
                "write a description of the molecule focused on its binding to human beta-secretase 1.",
                caption,
            ),
        ]
    }

    pub fn builtin(id: &str) -> Option<TaskSpec> {
        Self::builtins().into_iter().find(|t| t.id == id)
    }

    pub fn task_and_format(&self) -> String {
        format!("{}\n\n{}", self.instruction, self.answer_format.instructions())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Number of related drugs.
    pub k: usize,
    /// Maximum path lines in the biological relation prompt.
    pub path_cap: usize,
    pub temperature: f64,
    /// Per-agent overrides keyed by agent id.
    pub temperatures: BTreeMap<AgentId, f64>,
    pub max_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 5,
            path_cap: 50,
            temperature: 0.0,
            temperatures: BTreeMap::new(),
            max_tokens: 1024,
        }
    }
}

impl PipelineConfig {
    pub fn temperature_for(&self, agent: AgentId) -> f64 {
        self.temperatures.get(&agent).copied().unwrap_or(self.temperature)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

/// Wall-clock time since construction.
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        SystemClock(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Always reports the same instant, so every elapsed time is zero.
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("captioning tool failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait CaptionTool: Send + Sync {
    fn name(&self) -> String;
    fn caption(&self, smiles: &str) -> Result<String, ToolError>;
}

/// Runs an executable with the SMILES on standard input and reads the
/// caption from standard output.
#[derive(Debug, Clone)]
pub struct CommandTool {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CaptionTool for CommandTool {
    fn name(&self) -> String {
        self.program.display().to_string()
    }

    fn caption(&self, smiles: &str) -> Result<String, ToolError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(format!("{smiles}\n").as_bytes())?;
        let mut out = String::new();
        child.stdout.take().expect("piped stdout").read_to_string(&mut out)?;
        let status = child.wait()?;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut e) = child.stderr.take() {
                e.read_to_string(&mut err).ok();
            }
            return Err(ToolError::Failed(format!("{status}: {}", err.trim())));
        }
        let out = out.trim();
        if out.is_empty() {
            return Err(ToolError::Failed("empty output".into()));
        }
        Ok(out.to_string())
    }
}

/// Captions looked up by canonical key.
#[derive(Debug, Clone, Default)]
pub struct StaticTool {
    captions: HashMap<CanonicalKey, String>,
}

impl StaticTool {
    pub fn insert(&mut self, smiles: &str, caption: &str) -> Result<(), ChemError> {
        self.captions.insert(key_of(smiles)?, caption.to_string());
        Ok(())
    }

    /// Reads `smiles<TAB>caption` rows; unparseable rows are skipped.
    pub fn load<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut tool = StaticTool::default();
        for line in reader.lines() {
            let f = tsv::split(&line?);
            if f.len() >= 2 && !f[0].trim().eq_ignore_ascii_case("smiles") {
                if let Err(e) = tool.insert(f[0].trim(), f[1].trim()) {
                    log::warn!("static caption row skipped: {e}");
                }
            }
        }
        Ok(tool)
    }
}

impl CaptionTool for StaticTool {
    fn name(&self) -> String {
        "static".into()
    }

    fn caption(&self, smiles: &str) -> Result<String, ToolError> {
        let key = key_of(smiles).map_err(|e| ToolError::Failed(e.to_string()))?;
        self.captions
            .get(&key)
            .cloned()
            .ok_or_else(|| ToolError::Failed(format!("no caption for {key}")))
    }
}

pub struct Deps<'a> {
    pub kg: &'a KnowledgeGraph,
    pub annotations: Option<&'a AnnotationStore>,
    pub embeddings: &'a EmbeddingProvider,
    pub backend: &'a dyn ChatBackend,
    pub captioner: Option<&'a dyn CaptionTool>,
    pub config: PipelineConfig,
    pub clock: &'a dyn Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Call {
    pub agent: AgentId,
    pub prompt: String,
    pub response: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decisions {
    pub o_map: PlannerDecision,
    pub o_kgp: PlannerDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedDrug {
    pub id: String,
    pub name: String,
    pub paths: usize,
    /// Absent when the drug has no stored SMILES.
    pub tanimoto: Option<f64>,
    pub fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Answer {
    YesNo { value: bool, reason: String },
    Targets(Vec<String>),
    Caption(String),
    /// The prediction response could not be parsed.
    Error(String),
}

impl Answer {
    pub fn summary(&self) -> String {
        match self {
            Answer::YesNo { value, .. } => if *value { "YES" } else { "NO" }.to_string(),
            Answer::Targets(t) => t.join(", "),
            Answer::Caption(c) => c.clone(),
            Answer::Error(e) => format!("ERROR: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub smiles: String,
    pub key: CanonicalKey,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    #[serde(flatten)]
    pub result: AnchorResult,
    pub name: String,
    pub smiles: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub trace_id: String,
    pub task: String,
    pub backend: String,
    pub query: QueryRecord,
    pub decisions: Decisions,
    pub anchor: Option<AnchorRecord>,
    pub related: Vec<RelatedDrug>,
    pub paths_used: Vec<TwoHopPath>,
    pub database_caption: Option<String>,
    pub tool_caption: Option<String>,
    pub tool_invoked: bool,
    pub reports: BTreeMap<AgentId, AgentReport>,
    pub answer: Answer,
    pub calls: Vec<Call>,
    pub warnings: Vec<String>,
}

impl PipelineTrace {
    pub fn agent_sequence(&self) -> Vec<AgentId> {
        self.calls.iter().map(|c| c.agent).collect()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

pub fn trace_id(smiles: &str, task: &str, backend: &str) -> String {
    let mut h = Sha256::new();
    for part in [smiles, task, backend] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Mutable state of one query run.
struct Run<'d, 'a> {
    deps: &'d Deps<'a>,
    calls: Vec<Call>,
    warnings: Vec<String>,
}

impl Run<'_, '_> {
    fn call(&mut self, agent: AgentId, prompt: String) -> Result<(String, u64), PipelineError> {
        let request = ChatRequest {
            system: String::new(),
            user: prompt.clone(),
            temperature: self.deps.config.temperature_for(agent),
            max_tokens: self.deps.config.max_tokens,
        };
        let start = self.deps.clock.now();
        let response = self
            .deps
            .backend
            .complete(&request)
            .map_err(|source| PipelineError::Backend { agent, source })?;
        let elapsed_ms = self.deps.clock.now().saturating_sub(start).as_millis() as u64;
        self.calls.push(Call {
            agent,
            prompt,
            response: response.clone(),
            elapsed_ms,
        });
        Ok((response, elapsed_ms))
    }

    /// Calls the agent and parses the response, retrying once with a
    /// format reminder appended to the prompt.
    fn call_parsed<T>(
        &mut self,
        agent: AgentId,
        prompt: String,
        reminder: &str,
        parse: impl Fn(&str) -> Result<T, AgentError>,
    ) -> Result<Result<T, (AgentError, String)>, PipelineError> {
        let (response, _) = self.call(agent, prompt.clone())?;
        if let Ok(v) = parse(&response) {
            return Ok(Ok(v));
        }
        self.warnings
            .push(format!("{agent}: unparseable response, retrying with format reminder"));
        let (response, _) = self.call(agent, format!("{prompt}{reminder}"))?;
        Ok(parse(&response).map_err(|e| (e, response)))
    }

    fn planner(
        &mut self,
        agent: AgentId,
        prompt: String,
        default: bool,
    ) -> Result<PlannerDecision, PipelineError> {
        match self.call_parsed(agent, prompt, &planner_reminder(), parse_yes_no)? {
            Ok(d) => Ok(d),
            Err((e, _)) => {
                self.warnings.push(format!("{agent}: {e}; default applied"));
                Ok(PlannerDecision::forced(
                    default,
                    format!("planner response unparseable after retry; default {}", yes_no(default)),
                ))
            }
        }
    }

    fn report(&mut self, agent: AgentId, prompt: String) -> Result<AgentReport, PipelineError> {
        let (text, elapsed_ms) = self.call(agent, prompt)?;
        if text.trim().is_empty() {
            self.warnings.push(format!("{agent}: empty report"));
        }
        Ok(AgentReport {
            agent,
            text: text.trim().to_string(),
            elapsed_ms,
        })
    }
}

fn yes_no(v: bool) -> &'static str {
    if v {
        "TRUE"
    } else {
        "FALSE"
    }
}

fn render(agent: AgentId, ctx: &PromptContext) -> Result<String, PipelineError> {
    Ok(render_prompt(&PromptTemplate::get(agent), ctx)?)
}

pub struct Planning {
    pub o_map: PlannerDecision,
    pub o_kgp: PlannerDecision,
    pub anchor: Option<AnchorResult>,
    pub caption: Option<String>,
}

fn run_planning_in(run: &mut Run, query: &Molecule, smiles: &str) -> Result<Planning, PipelineError> {
    let deps = run.deps;
    let caption = deps.annotations.and_then(|a| a.lookup_caption(query.key()));
    let o_map = match &caption {
        None => PlannerDecision::forced(true, "no database caption; captioning tool requested"),
        Some(c) => {
            let ctx: PromptContext = [(agents::DESCRIPTION, Value::from(c.as_str()))].into();
            run.planner(AgentId::MolannPlanner, render(AgentId::MolannPlanner, &ctx)?, true)?
        }
    };
    let (anchor, o_kgp) = match deps.embeddings.anchor(deps.kg, query) {
        Err(e) => {
            run.warnings.push(format!("anchor retrieval: {e}"));
            (
                None,
                PlannerDecision::forced(false, format!("no anchor drug available ({e})")),
            )
        }
        Ok(anchor) => {
            let entity = deps.kg.entity(&anchor.drug).expect("anchor is a KG entity");
            let ctx: PromptContext = [
                (agents::TARGET_SMILES, Value::from(smiles)),
                (agents::ANCHOR_SMILES, Value::from(entity.smiles.clone().unwrap_or_default())),
                (agents::ANCHOR_NAME, Value::from(entity.name.as_str())),
                (agents::ANCHOR_TANIMOTO, Value::from(anchor.tanimoto)),
            ]
            .into();
            let d = run.planner(AgentId::KgPlanner, render(AgentId::KgPlanner, &ctx)?, false)?;
            (Some(anchor), d)
        }
    };
    Ok(Planning {
        o_map,
        o_kgp,
        anchor,
        caption,
    })
}

/// Planning team decisions for one query.
pub fn run_planning(deps: &Deps, query: &Molecule) -> Result<(Planning, Vec<Call>), PipelineError> {
    let mut run = Run {
        deps,
        calls: Vec::new(),
        warnings: Vec::new(),
    };
    let p = run_planning_in(&mut run, query, query.smiles())?;
    Ok((p, run.calls))
}

pub struct KgTeam {
    pub drugrel: AgentReport,
    pub biorel: AgentReport,
    pub related: Vec<RelatedDrug>,
    pub paths_used: Vec<TwoHopPath>,
}

fn run_kg_team_in(
    run: &mut Run,
    query: &Molecule,
    smiles: &str,
    anchor: &AnchorResult,
    task: &TaskSpec,
) -> Result<KgTeam, PipelineError> {
    let deps = run.deps;
    let kg = deps.kg;
    let paths = two_hop_paths(kg, &anchor.drug)?;
    let ranked = top_k_related(&paths, deps.config.k.max(1));
    let mut related = Vec::new();
    for (id, count) in &ranked {
        let tanimoto = match kg.molecule(id) {
            Some(m) => Some(query.similarity(m)?),
            None => {
                run.warnings
                    .push(format!("related drug {id} has no SMILES; similarity omitted"));
                None
            }
        };
        related.push(RelatedDrug {
            id: id.clone(),
            name: agents::display_name(kg, id),
            paths: *count,
            tanimoto,
            fingerprint: kg.molecule(id).map(|m| m.fingerprint().to_hex()),
        });
    }
    let to_related: Vec<TwoHopPath> = paths
        .into_iter()
        .filter(|p| ranked.iter().any(|(d, _)| *d == p.drug))
        .collect();
    let paths_used = rank_paths(&to_related, deps.config.path_cap.max(1));

    let anchor_entity = kg.entity(&anchor.drug).expect("anchor is a KG entity");
    let (names, similarities, path_text) = if related.is_empty() {
        (
            NO_RELATED_DRUGS.to_string(),
            NO_RELATED_DRUGS.to_string(),
            NO_RELATED_DRUGS.to_string(),
        )
    } else {
        let names = related.iter().map(|r| r.name.as_str()).collect::<Vec<_>>().join(", ");
        let sims = related
            .iter()
            .map(|r| match r.tanimoto {
                Some(t) => format!("{}: {t:.4}", r.name),
                None => format!("{}: {SIMILARITY_UNAVAILABLE}", r.name),
            })
            .collect::<Vec<_>>()
            .join(", ");
        let lines = paths_used.iter().map(|p| path_line(kg, p)).collect::<Vec<_>>().join("\n");
        (names, sims, lines)
    };

    let ctx: PromptContext = [
        (agents::TASK_DESCRIPTION, Value::from(task.description.as_str())),
        (agents::TARGET_SMILES, Value::from(smiles)),
        (agents::ANCHOR_SMILES, Value::from(anchor_entity.smiles.clone().unwrap_or_default())),
        (agents::ANCHOR_NAME, Value::from(anchor_entity.name.as_str())),
        (agents::ANCHOR_TANIMOTO, Value::from(anchor.tanimoto)),
        (agents::RELATED_DRUGS, Value::from(names)),
        (agents::RELATED_TANIMOTO, Value::from(similarities)),
        (agents::TWO_HOP_PATHS, Value::from(path_text)),
    ]
    .into();
    let drugrel = run.report(AgentId::Drugrel, render(AgentId::Drugrel, &ctx)?)?;
    let biorel = run.report(AgentId::Biorel, render(AgentId::Biorel, &ctx)?)?;
    Ok(KgTeam {
        drugrel,
        biorel,
        related,
        paths_used,
    })
}

/// Drug-relation and biological-relation reports for an anchor.
pub fn run_kg_team(
    deps: &Deps,
    query: &Molecule,
    anchor: &AnchorResult,
    task: &TaskSpec,
) -> Result<(KgTeam, Vec<Call>), PipelineError> {
    let mut run = Run {
        deps,
        calls: Vec::new(),
        warnings: Vec::new(),
    };
    let team = run_kg_team_in(&mut run, query, query.smiles(), anchor, task)?;
    Ok((team, run.calls))
}

pub struct MuTeam {
    pub report: AgentReport,
    pub caption: Option<String>,
    pub tool_caption: Option<String>,
    pub tool_invoked: bool,
}

fn run_mu_team_in(
    run: &mut Run,
    smiles: &str,
    caption: Option<&str>,
    o_map: bool,
    kg_reports: Option<(&AgentReport, &AgentReport)>,
    task: &TaskSpec,
) -> Result<MuTeam, PipelineError> {
    let deps = run.deps;
    let mut tool_caption = None;
    let mut tool_invoked = false;
    if o_map {
        match deps.captioner {
            None => run
                .warnings
                .push("captioning tool requested but none is configured".into()),
            Some(tool) => {
                tool_invoked = true;
                match tool.caption(smiles) {
                    Ok(text) => tool_caption = Some(text),
                    Err(e) => run.warnings.push(format!("captioning tool {}: {e}", tool.name())),
                }
            }
        }
    }
    let combined = match (caption, &tool_caption) {
        (Some(db), Some(t)) => Some(format!("{db} {t}")),
        (Some(db), None) => Some(db.to_string()),
        (None, Some(t)) => Some(t.clone()),
        (None, None) => None,
    };
    let (drugrel, biorel) = match kg_reports {
        Some((d, b)) => (d.text.clone(), b.text.clone()),
        None => (NO_REPORT.to_string(), NO_REPORT.to_string()),
    };
    let ctx: PromptContext = [
        (agents::TASK_DESCRIPTION, Value::from(task.description.as_str())),
        (agents::TARGET_SMILES, Value::from(smiles)),
        (
            agents::DESCRIPTION,
            Value::from(combined.clone().unwrap_or_else(|| NO_DESCRIPTION.to_string())),
        ),
        (agents::DRUGREL_REPORT, Value::from(drugrel)),
        (agents::BIOREL_REPORT, Value::from(biorel)),
    ]
    .into();
    let report = run.report(AgentId::Mu, render(AgentId::Mu, &ctx)?)?;
    Ok(MuTeam {
        report,
        caption: combined,
        tool_caption,
        tool_invoked,
    })
}

/// Molecule understanding report, augmenting the caption when `o_map` holds.
pub fn run_mu_team(
    deps: &Deps,
    query: &Molecule,
    caption: Option<&str>,
    o_map: bool,
    kg_reports: Option<(&AgentReport, &AgentReport)>,
    task: &TaskSpec,
) -> Result<(MuTeam, Vec<Call>, Vec<String>), PipelineError> {
    let mut run = Run {
        deps,
        calls: Vec::new(),
        warnings: Vec::new(),
    };
    let mu = run_mu_team_in(&mut run, query.smiles(), caption, o_map, kg_reports, task)?;
    Ok((mu, run.calls, run.warnings))
}

fn parse_answer(format: AnswerFormat, text: &str) -> Result<Answer, AgentError> {
    match format {
        AnswerFormat::YesNo => parse_yes_no(text).map(|d| Answer::YesNo {
            value: d.value,
            reason: d.reason,
        }),
        AnswerFormat::TargetList { k } => parse_target_list(text, k).map(Answer::Targets),
        AnswerFormat::Caption => {
            let t = text.trim();
            if t.is_empty() {
                Err(AgentError::Parse("empty caption".into()))
            } else {
                Ok(Answer::Caption(t.to_string()))
            }
        }
    }
}

/// Full pipeline for one molecule and task.
pub fn run_query(deps: &Deps, smiles: &str, task: &TaskSpec) -> Result<PipelineTrace, PipelineError> {
    let smiles = smiles.trim();
    let query = Molecule::with_params(smiles, deps.kg.fingerprint_params())?;
    let mut run = Run {
        deps,
        calls: Vec::new(),
        warnings: Vec::new(),
    };
    let planning = run_planning_in(&mut run, &query, smiles)?;

    let kg_team = match (&planning.anchor, planning.o_kgp.value) {
        (Some(anchor), true) => Some(run_kg_team_in(&mut run, &query, smiles, anchor, task)?),
        _ => None,
    };
    let mu = run_mu_team_in(
        &mut run,
        smiles,
        planning.caption.as_deref(),
        planning.o_map.value,
        kg_team.as_ref().map(|t| (&t.drugrel, &t.biorel)),
        task,
    )?;

    let (drugrel, biorel) = match &kg_team {
        Some(t) => (t.drugrel.text.clone(), t.biorel.text.clone()),
        None => (NO_REPORT.to_string(), NO_REPORT.to_string()),
    };
    let ctx: PromptContext = [
        (agents::TASK_DESCRIPTION, Value::from(task.description.as_str())),
        (agents::TARGET_SMILES, Value::from(smiles)),
        (agents::MU_REPORT, Value::from(mu.report.text.as_str())),
        (agents::DRUGREL_REPORT, Value::from(drugrel)),
        (agents::BIOREL_REPORT, Value::from(biorel)),
        (agents::TASK_AND_FORMAT, Value::from(task.task_and_format())),
    ]
    .into();
    let prompt = render(AgentId::Prediction, &ctx)?;
    let format = task.answer_format;
    let answer = match run.call_parsed(AgentId::Prediction, prompt, &format.reminder(), |t| {
        parse_answer(format, t)
    })? {
        Ok(a) => a,
        Err((e, _)) => {
            run.warnings.push(format!("prediction: {e}"));
            Answer::Error(e.to_string())
        }
    };

    let mut reports = BTreeMap::new();
    let anchor = planning.anchor.map(|result| {
        let entity = deps.kg.entity(&result.drug).expect("anchor is a KG entity");
        let fingerprint = deps
            .kg
            .molecule(&result.drug)
            .map(|m| m.fingerprint().to_hex())
            .unwrap_or_default();
        AnchorRecord {
            name: entity.name.clone(),
            smiles: entity.smiles.clone().unwrap_or_default(),
            fingerprint,
            result,
        }
    });
    let (related, paths_used) = match kg_team {
        Some(t) => {
            reports.insert(AgentId::Drugrel, t.drugrel);
            reports.insert(AgentId::Biorel, t.biorel);
            (t.related, t.paths_used)
        }
        None => (Vec::new(), Vec::new()),
    };
    reports.insert(AgentId::Mu, mu.report);
    let backend = deps.backend.identity();
    Ok(PipelineTrace {
        trace_id: trace_id(smiles, &task.id, &backend),
        task: task.id.clone(),
        backend,
        query: QueryRecord {
            smiles: smiles.to_string(),
            key: query.key().clone(),
            fingerprint: query.fingerprint().to_hex(),
        },
        decisions: Decisions {
            o_map: planning.o_map,
            o_kgp: planning.o_kgp,
        },
        anchor,
        related,
        paths_used,
        database_caption: planning.caption,
        tool_caption: mu.tool_caption,
        tool_invoked: mu.tool_invoked,
        reports,
        answer,
        calls: run.calls,
        warnings: run.warnings,
    })
}

/// Line-delimited JSON trace log.
pub struct TraceLog {
    path: PathBuf,
    lock: Mutex<()>,
}

impl TraceLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TraceLog {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, trace: &PipelineTrace) -> io::Result<()> {
        let _guard = self.lock.lock().unwrap();
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", trace.to_json_line())
    }

    pub fn read_all(path: &Path) -> io::Result<Vec<PipelineTrace>> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("trace line {}: {e}", i + 1))
            })?;
            out.push(t);
        }
        Ok(out)
    }

    /// Most recent trace with this id.
    pub fn find(path: &Path, trace_id: &str) -> io::Result<Option<PipelineTrace>> {
        Ok(Self::read_all(path)?.into_iter().rev().find(|t| t.trace_id == trace_id))
    }
}

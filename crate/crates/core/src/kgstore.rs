//! Immutable biomedical knowledge graph: typed entities, relation triplets,
//! an undirected adjacency index, and the drug-to-drug two-hop queries used
//! to find drugs related to an anchor.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chem::{CanonicalKey, FingerprintParams, Molecule};
use crate::tsv;

pub const TRIPLET_HEADER: [&str; 9] = [
    "head_id",
    "head_kind",
    "head_name",
    "relation",
    "tail_id",
    "tail_kind",
    "tail_name",
    "head_smiles",
    "tail_smiles",
];

const ENTITY_FILE: &str = "entities.tsv";
const TRIPLET_FILE: &str = "triplets.tsv";

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("no valid triplet rows were found")]
    EmptyGraph,
    #[error("unknown entity '{0}'")]
    UnknownEntity(String),
    #[error("entity '{0}' is not a drug")]
    NotADrug(String),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Drug,
    GeneProtein,
    Disease,
    EffectPhenotype,
    Pathway,
    Anatomy,
    BiologicalProcess,
    CellularComponent,
    Exposure,
    MolecularFunction,
}

impl EntityKind {
    pub const ALL: [EntityKind; 10] = [
        EntityKind::Drug,
        EntityKind::GeneProtein,
        EntityKind::Disease,
        EntityKind::EffectPhenotype,
        EntityKind::Pathway,
        EntityKind::Anatomy,
        EntityKind::BiologicalProcess,
        EntityKind::CellularComponent,
        EntityKind::Exposure,
        EntityKind::MolecularFunction,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EntityKind::Drug => "drug",
            EntityKind::GeneProtein => "gene/protein",
            EntityKind::Disease => "disease",
            EntityKind::EffectPhenotype => "effect/phenotype",
            EntityKind::Pathway => "pathway",
            EntityKind::Anatomy => "anatomy",
            EntityKind::BiologicalProcess => "biological_process",
            EntityKind::CellularComponent => "cellular_component",
            EntityKind::Exposure => "exposure",
            EntityKind::MolecularFunction => "molecular_function",
        }
    }

    /// Kinds allowed as the middle entity of a two-hop path.
    pub fn bridges_drugs(self) -> bool {
        matches!(
            self,
            EntityKind::GeneProtein | EntityKind::EffectPhenotype | EntityKind::Disease
        )
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        let kind = match norm.as_str() {
            "drug" | "drugs" => EntityKind::Drug,
            "gene/protein" | "gene_protein" | "genes/proteins" | "gene" | "protein" => {
                EntityKind::GeneProtein
            }
            "disease" | "diseases" => EntityKind::Disease,
            "effect/phenotype" | "effect_phenotype" | "effects/phenotypes" | "phenotype" => {
                EntityKind::EffectPhenotype
            }
            "pathway" | "pathways" => EntityKind::Pathway,
            "anatomy" => EntityKind::Anatomy,
            "biological_process" | "biological_processes" => EntityKind::BiologicalProcess,
            "cellular_component" | "cellular_components" => EntityKind::CellularComponent,
            "exposure" | "exposures" => EntityKind::Exposure,
            "molecular_function" | "molecular_functions" => EntityKind::MolecularFunction,
            _ => return Err(format!("unknown entity kind '{}'", s.trim())),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    pub name: String,
    pub smiles: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// `(anchor, rel1, mid, rel2, drug)` with drug ids at both ends.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TwoHopPath {
    pub anchor: String,
    pub rel1: String,
    pub mid: String,
    pub rel2: String,
    pub drug: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Distinct triplets after collapsing exact and reciprocal duplicates.
    pub triplet_count: usize,
    pub entity_counts: BTreeMap<String, usize>,
    pub relation_counts: BTreeMap<String, usize>,
    pub rejected_lines: Vec<(usize, String)>,
    pub duplicate_rows: usize,
    /// Rows whose reversed triplet had already been stored.
    pub reciprocal_rows: usize,
}

/// One input row before validation.
#[derive(Debug, Clone, Default)]
pub struct TripletRecord {
    pub head_id: String,
    pub head_kind: String,
    pub head_name: String,
    pub relation: String,
    pub tail_id: String,
    pub tail_kind: String,
    pub tail_name: String,
    pub head_smiles: Option<String>,
    pub tail_smiles: Option<String>,
}

impl TripletRecord {
    fn from_fields(fields: &[String]) -> Result<Self, String> {
        if fields.len() < 7 {
            return Err(format!("expected at least 7 fields, found {}", fields.len()));
        }
        let opt = |i: usize| {
            fields
                .get(i)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        Ok(TripletRecord {
            head_id: fields[0].trim().to_string(),
            head_kind: fields[1].clone(),
            head_name: fields[2].trim().to_string(),
            relation: fields[3].trim().to_string(),
            tail_id: fields[4].trim().to_string(),
            tail_kind: fields[5].clone(),
            tail_name: fields[6].trim().to_string(),
            head_smiles: opt(7),
            tail_smiles: opt(8),
        })
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    index: HashMap<String, usize>,
    relations: Vec<String>,
    triplets: Vec<(u32, u32, u32)>,
    adjacency: Vec<Vec<(u32, u32)>>,
    molecules: HashMap<usize, Molecule>,
    drugs_by_key: HashMap<CanonicalKey, usize>,
    fingerprint: FingerprintParams,
}

#[derive(Default)]
struct Builder {
    entities: Vec<Entity>,
    index: HashMap<String, usize>,
    relations: Vec<String>,
    relation_index: HashMap<String, u32>,
    triplets: Vec<(u32, u32, u32)>,
    seen: HashSet<(u32, u32, u32)>,
    molecules: HashMap<usize, Molecule>,
    report: IngestReport,
    params: FingerprintParams,
}

impl Builder {
    fn new(params: FingerprintParams) -> Self {
        Builder {
            params,
            ..Default::default()
        }
    }

    /// Validates one endpoint without mutating state.
    fn check_entity(
        &self,
        id: &str,
        kind: &str,
        smiles: Option<&str>,
    ) -> Result<(EntityKind, Option<Molecule>), String> {
        if id.is_empty() {
            return Err("missing entity id".into());
        }
        let kind: EntityKind = kind.parse()?;
        if let Some(&idx) = self.index.get(id) {
            if self.entities[idx].kind != kind {
                return Err(format!(
                    "entity '{id}' redeclared as {kind} (was {})",
                    self.entities[idx].kind
                ));
            }
        }
        let molecule = match smiles {
            None => None,
            Some(_) if kind != EntityKind::Drug => {
                return Err(format!("SMILES given for non-drug entity '{id}'"))
            }
            Some(s) => {
                if let Some(&idx) = self.index.get(id) {
                    if self.molecules.contains_key(&idx) {
                        return Ok((kind, None));
                    }
                }
                Some(
                    Molecule::with_params(s, self.params)
                        .map_err(|e| format!("unparseable SMILES for '{id}': {e}"))?,
                )
            }
        };
        Ok((kind, molecule))
    }

    fn entity(
        &mut self,
        id: &str,
        kind: EntityKind,
        name: &str,
        smiles: Option<String>,
        molecule: Option<Molecule>,
    ) -> u32 {
        let idx = match self.index.get(id) {
            Some(&idx) => idx,
            None => {
                let idx = self.entities.len();
                self.entities.push(Entity {
                    id: id.to_string(),
                    kind,
                    name: if name.is_empty() { id.to_string() } else { name.to_string() },
                    smiles: None,
                });
                self.index.insert(id.to_string(), idx);
                idx
            }
        };
        if let Some(m) = molecule {
            self.entities[idx].smiles = smiles;
            self.molecules.insert(idx, m);
        }
        idx as u32
    }

    fn relation(&mut self, label: &str) -> u32 {
        if let Some(&r) = self.relation_index.get(label) {
            return r;
        }
        let r = self.relations.len() as u32;
        self.relations.push(label.to_string());
        self.relation_index.insert(label.to_string(), r);
        r
    }

    fn add(&mut self, line: usize, rec: TripletRecord) {
        if rec.relation.is_empty() {
            self.report.rejected_lines.push((line, "missing relation".into()));
            return;
        }
        let head = self.check_entity(&rec.head_id, &rec.head_kind, rec.head_smiles.as_deref());
        let tail = self.check_entity(&rec.tail_id, &rec.tail_kind, rec.tail_smiles.as_deref());
        let ((hk, hm), (tk, tm)) = match (head, tail) {
            (Ok(h), Ok(t)) => (h, t),
            (Err(reason), _) | (_, Err(reason)) => {
                self.report.rejected_lines.push((line, reason));
                return;
            }
        };
        let h = self.entity(&rec.head_id, hk, &rec.head_name, rec.head_smiles, hm);
        let t = self.entity(&rec.tail_id, tk, &rec.tail_name, rec.tail_smiles, tm);
        let r = self.relation(&rec.relation);
        if self.seen.contains(&(h, r, t)) {
            self.report.duplicate_rows += 1;
            return;
        }
        if self.seen.contains(&(t, r, h)) {
            self.report.reciprocal_rows += 1;
            return;
        }
        self.seen.insert((h, r, t));
        self.triplets.push((h, r, t));
    }

    fn finish(self) -> Result<(KnowledgeGraph, IngestReport), KgError> {
        if self.triplets.is_empty() {
            return Err(KgError::EmptyGraph);
        }
        let mut report = self.report;
        let mut adjacency = vec![Vec::new(); self.entities.len()];
        for &(h, r, t) in &self.triplets {
            if h != t {
                adjacency[h as usize].push((t, r));
                adjacency[t as usize].push((h, r));
            }
            *report
                .relation_counts
                .entry(self.relations[r as usize].clone())
                .or_default() += 1;
        }
        report.triplet_count = self.triplets.len();
        for e in &self.entities {
            *report.entity_counts.entry(e.kind.label().to_string()).or_default() += 1;
        }
        let mut drugs_by_key: HashMap<CanonicalKey, usize> = HashMap::new();
        for (&idx, molecule) in &self.molecules {
            drugs_by_key
                .entry(molecule.key().clone())
                .and_modify(|cur| {
                    if self.entities[idx].id < self.entities[*cur].id {
                        *cur = idx;
                    }
                })
                .or_insert(idx);
        }
        let kg = KnowledgeGraph {
            entities: self.entities,
            index: self.index,
            relations: self.relations,
            triplets: self.triplets,
            adjacency,
            molecules: self.molecules,
            drugs_by_key,
            fingerprint: self.params,
        };
        Ok((kg, report))
    }
}

/// Reads the triplet TSV. A leading header row is recognized and skipped.
pub fn ingest_triplets<R: BufRead>(reader: R) -> Result<(KnowledgeGraph, IngestReport), KgError> {
    ingest_triplets_with(reader, FingerprintParams::default())
}

pub fn ingest_triplets_with<R: BufRead>(
    reader: R,
    params: FingerprintParams,
) -> Result<(KnowledgeGraph, IngestReport), KgError> {
    let mut builder = Builder::new(params);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = tsv::split(&line);
        if number == 1 && fields[0].trim() == TRIPLET_HEADER[0] {
            continue;
        }
        match TripletRecord::from_fields(&fields) {
            Ok(rec) => builder.add(number, rec),
            Err(reason) => builder.report.rejected_lines.push((number, reason)),
        }
    }
    builder.finish()
}

/// Builds a graph from in-memory records; line numbers are 1-based positions.
pub fn ingest_records(
    records: impl IntoIterator<Item = TripletRecord>,
    params: FingerprintParams,
) -> Result<(KnowledgeGraph, IngestReport), KgError> {
    let mut builder = Builder::new(params);
    for (i, rec) in records.into_iter().enumerate() {
        builder.add(i + 1, rec);
    }
    builder.finish()
}

impl KnowledgeGraph {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.index.get(id).map(|&i| &self.entities[i])
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn drugs(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.kind == EntityKind::Drug)
    }

    /// Parsed structure of a drug that carries SMILES.
    pub fn molecule(&self, id: &str) -> Option<&Molecule> {
        self.index.get(id).and_then(|i| self.molecules.get(i))
    }

    pub fn fingerprint_params(&self) -> FingerprintParams {
        self.fingerprint
    }

    pub fn triplet_count(&self) -> usize {
        self.triplets.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.triplets.iter().map(|&(h, r, t)| Triplet {
            head: self.entities[h as usize].id.clone(),
            relation: self.relations[r as usize].clone(),
            tail: self.entities[t as usize].id.clone(),
        })
    }

    /// Neighbors of an entity as (entity id, relation label), ignoring
    /// stored direction, sorted.
    pub fn neighbors(&self, id: &str) -> Option<Vec<(&str, &str)>> {
        let &idx = self.index.get(id)?;
        let mut out: Vec<(&str, &str)> = self.adjacency[idx]
            .iter()
            .map(|&(n, r)| {
                (
                    self.entities[n as usize].id.as_str(),
                    self.relations[r as usize].as_str(),
                )
            })
            .collect();
        out.sort_unstable();
        Some(out)
    }

    /// Recomputes summary statistics (rejections are not retained).
    pub fn report(&self) -> IngestReport {
        let mut report = IngestReport {
            triplet_count: self.triplets.len(),
            ..Default::default()
        };
        for e in &self.entities {
            *report.entity_counts.entry(e.kind.label().to_string()).or_default() += 1;
        }
        for &(_, r, _) in &self.triplets {
            *report
                .relation_counts
                .entry(self.relations[r as usize].clone())
                .or_default() += 1;
        }
        report
    }

    /// Writes `entities.tsv` and `triplets.tsv` under `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<(), KgError> {
        fs::create_dir_all(dir)?;
        let mut out = io::BufWriter::new(fs::File::create(dir.join(ENTITY_FILE))?);
        writeln!(out, "id\tkind\tname\tsmiles")?;
        for e in &self.entities {
            writeln!(
                out,
                "{}",
                tsv::join(&[
                    e.id.as_str(),
                    e.kind.label(),
                    e.name.as_str(),
                    e.smiles.as_deref().unwrap_or(""),
                ])
            )?;
        }
        out.flush()?;
        let mut out = io::BufWriter::new(fs::File::create(dir.join(TRIPLET_FILE))?);
        writeln!(out, "head\trelation\ttail")?;
        for t in self.triplets() {
            writeln!(out, "{}", tsv::join(&[t.head, t.relation, t.tail]))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_snapshot(dir: &Path) -> Result<KnowledgeGraph, KgError> {
        Self::load_snapshot_with(dir, FingerprintParams::default())
    }

    pub fn load_snapshot_with(dir: &Path, params: FingerprintParams) -> Result<KnowledgeGraph, KgError> {
        let entities = BufReader::new(fs::File::open(dir.join(ENTITY_FILE))?);
        let mut table: HashMap<String, Entity> = HashMap::new();
        for (i, line) in entities.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f = tsv::split(&line);
            if f.len() < 3 {
                return Err(KgError::Snapshot {
                    line: i + 1,
                    reason: "expected id, kind, name, smiles".into(),
                });
            }
            let kind = f[1]
                .parse()
                .map_err(|reason| KgError::Snapshot { line: i + 1, reason })?;
            let smiles = f.get(3).filter(|s| !s.is_empty()).cloned();
            table.insert(
                f[0].clone(),
                Entity {
                    id: f[0].clone(),
                    kind,
                    name: f[2].clone(),
                    smiles,
                },
            );
        }
        let triplets = BufReader::new(fs::File::open(dir.join(TRIPLET_FILE))?);
        let mut records = Vec::new();
        for (i, line) in triplets.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f = tsv::split(&line);
            let lookup = |id: &String| {
                table.get(id).ok_or_else(|| KgError::Snapshot {
                    line: i + 1,
                    reason: format!("triplet references unknown entity '{id}'"),
                })
            };
            if f.len() != 3 {
                return Err(KgError::Snapshot {
                    line: i + 1,
                    reason: "expected head, relation, tail".into(),
                });
            }
            let head = lookup(&f[0])?;
            let tail = lookup(&f[2])?;
            records.push(TripletRecord {
                head_id: head.id.clone(),
                head_kind: head.kind.label().into(),
                head_name: head.name.clone(),
                relation: f[1].clone(),
                tail_id: tail.id.clone(),
                tail_kind: tail.kind.label().into(),
                tail_name: tail.name.clone(),
                head_smiles: head.smiles.clone(),
                tail_smiles: tail.smiles.clone(),
            });
        }
        let (kg, report) = ingest_records(records, params)?;
        if let Some((line, reason)) = report.rejected_lines.first() {
            return Err(KgError::Snapshot {
                line: *line,
                reason: reason.clone(),
            });
        }
        Ok(kg)
    }
}

/// Every anchor–mid–drug path whose mid entity is a gene/protein,
/// effect/phenotype or disease, sorted by (drug, mid, rel1, rel2).
pub fn two_hop_paths(kg: &KnowledgeGraph, anchor: &str) -> Result<Vec<TwoHopPath>, KgError> {
    let &a = kg
        .index
        .get(anchor)
        .ok_or_else(|| KgError::UnknownEntity(anchor.to_string()))?;
    if kg.entities[a].kind != EntityKind::Drug {
        return Err(KgError::NotADrug(anchor.to_string()));
    }
    let mut paths = Vec::new();
    for &(mid, rel1) in &kg.adjacency[a] {
        if !kg.entities[mid as usize].kind.bridges_drugs() {
            continue;
        }
        for &(drug, rel2) in &kg.adjacency[mid as usize] {
            let drug = drug as usize;
            if drug == a || kg.entities[drug].kind != EntityKind::Drug {
                continue;
            }
            paths.push(TwoHopPath {
                anchor: anchor.to_string(),
                rel1: kg.relations[rel1 as usize].clone(),
                mid: kg.entities[mid as usize].id.clone(),
                rel2: kg.relations[rel2 as usize].clone(),
                drug: kg.entities[drug].id.clone(),
            });
        }
    }
    paths.sort_by(|x, y| {
        (&x.drug, &x.mid, &x.rel1, &x.rel2).cmp(&(&y.drug, &y.mid, &y.rel1, &y.rel2))
    });
    Ok(paths)
}

/// Drugs by descending path count, ties by ascending id, at most `k`.
pub fn top_k_related(paths: &[TwoHopPath], k: usize) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in paths {
        *counts.entry(p.drug.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().map(|(d, c)| (d.to_string(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// The drug whose stored SMILES has this canonical key.
pub fn drug_by_key<'a>(kg: &'a KnowledgeGraph, key: &CanonicalKey) -> Option<&'a Entity> {
    kg.drugs_by_key.get(key).map(|&i| &kg.entities[i])
}

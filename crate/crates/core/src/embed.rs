//! Molecule embeddings and anchor-drug retrieval by cosine argmax.

use std::collections::BTreeMap;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};

use crate::chem::{ChemError, Molecule};
use crate::kgstore::{drug_by_key, EntityKind, KnowledgeGraph};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding table has no valid rows")]
    EmptyTable,
    #[error("embedding header must be `id dim`, found {0:?}")]
    BadHeader(String),
    #[error("vector dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("no knowledge-graph drug has an embedding")]
    NoEmbeddedDrugs,
    #[error("no embedded drug carries SMILES for a similarity computation")]
    AnchorWithoutSmiles,
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    rejected: Vec<(usize, String)>,
}

impl EmbeddingTable {
    fn check(dim: usize, vector: &[f64]) -> Result<(), String> {
        if vector.len() != dim {
            return Err(format!("expected {dim} components, found {}", vector.len()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err("non-finite component".into());
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err("zero vector".into());
        }
        Ok(())
    }

    /// Builds a table from in-memory vectors; invalid vectors are rejected.
    pub fn from_entries(
        dim: usize,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, EmbedError> {
        let mut table = EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
            rejected: Vec::new(),
        };
        for (i, (id, vector)) in entries.into_iter().enumerate() {
            match Self::check(dim, &vector) {
                Ok(()) => {
                    table.entries.insert(id, vector);
                }
                Err(reason) => table.rejected.push((i + 1, reason)),
            }
        }
        if table.entries.is_empty() {
            return Err(EmbedError::EmptyTable);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Rows rejected at load time, as (line number, reason).
    pub fn rejected(&self) -> &[(usize, String)] {
        &self.rejected
    }
}

/// Reads a whitespace-separated table: `id dim` header, then `entity v1 .. v_dim`.
pub fn load_embedding_table<R: BufRead>(reader: R) -> Result<EmbeddingTable, EmbedError> {
    let mut lines = reader.lines().enumerate();
    let dim = loop {
        let Some((_, line)) = lines.next() else {
            return Err(EmbedError::EmptyTable);
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let header: Vec<&str> = line.split_whitespace().collect();
        match header.as_slice() {
            ["id", dim] => match dim.parse::<usize>() {
                Ok(d) if d > 0 => break d,
                _ => return Err(EmbedError::BadHeader(line.clone())),
            },
            _ => return Err(EmbedError::BadHeader(line.clone())),
        }
    };
    let mut table = EmbeddingTable {
        dim,
        entries: BTreeMap::new(),
        rejected: Vec::new(),
    };
    for (i, line) in lines {
        let line = line?;
        let number = i + 1;
        let mut tokens = line.split_whitespace();
        let Some(id) = tokens.next() else { continue };
        let parsed: Result<Vec<f64>, _> = tokens.map(str::parse::<f64>).collect();
        let outcome = match parsed {
            Ok(vector) => EmbeddingTable::check(dim, &vector).map(|()| vector),
            Err(e) => Err(format!("unparseable component: {e}")),
        };
        match outcome {
            Ok(vector) => {
                if table.entries.insert(id.to_string(), vector).is_some() {
                    log::warn!("embedding line {number}: duplicate id '{id}' replaces earlier row");
                }
            }
            Err(reason) => table.rejected.push((number, reason)),
        }
    }
    if table.entries.is_empty() {
        return Err(EmbedError::EmptyTable);
    }
    Ok(table)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// 0/1 vector over the fingerprint bits.
pub fn fingerprint_vector(molecule: &Molecule) -> Vec<f64> {
    let fp = molecule.fingerprint();
    (0..fp.width())
        .map(|b| if fp.contains(b) { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResult {
    pub drug: String,
    pub cosine: f64,
    pub tanimoto: f64,
}

/// KG drug with the highest cosine to `query_vec`; ties go to the smaller id.
/// Candidates without stored SMILES are passed over.
pub fn find_anchor(
    query_vec: &[f64],
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    query_molecule: &Molecule,
) -> Result<AnchorResult, EmbedError> {
    if query_vec.len() != table.dim {
        return Err(EmbedError::DimensionMismatch {
            left: query_vec.len(),
            right: table.dim,
        });
    }
    if query_vec.iter().all(|&v| v == 0.0) {
        return Err(EmbedError::ZeroVector);
    }
    let mut candidates = Vec::new();
    for (id, vector) in table.entries() {
        if kg.entity(id).map(|e| e.kind) != Some(EntityKind::Drug) {
            continue;
        }
        candidates.push((cosine(query_vec, vector)?, id));
    }
    if candidates.is_empty() {
        return Err(EmbedError::NoEmbeddedDrugs);
    }
    // entries iterate in ascending id order, so a stable sort keeps ties by id
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (cos, id) in candidates {
        if let Some(molecule) = kg.molecule(id) {
            return Ok(AnchorResult {
                drug: id.to_string(),
                cosine: cos,
                tanimoto: query_molecule.similarity(molecule)?,
            });
        }
    }
    Err(EmbedError::AnchorWithoutSmiles)
}

/// Source of the vectors used for anchor retrieval.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    /// Precomputed vectors keyed by entity id. The query vector is the row
    /// keyed by the query's canonical key, or by the KG drug sharing that key.
    Table(EmbeddingTable),
    /// Fingerprint bit vectors of every KG drug that has SMILES.
    Fingerprint(Option<EmbeddingTable>),
}

impl EmbeddingProvider {
    pub fn fingerprint(kg: &KnowledgeGraph) -> Self {
        let entries = kg
            .drugs()
            .filter_map(|d| kg.molecule(&d.id).map(|m| (d.id.clone(), fingerprint_vector(m))));
        EmbeddingProvider::Fingerprint(
            EmbeddingTable::from_entries(kg.fingerprint_params().width, entries).ok(),
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingProvider::Table(_) => "table",
            EmbeddingProvider::Fingerprint(_) => "fingerprint",
        }
    }

    pub fn table(&self) -> Option<&EmbeddingTable> {
        match self {
            EmbeddingProvider::Table(t) => Some(t),
            EmbeddingProvider::Fingerprint(t) => t.as_ref(),
        }
    }

    pub fn query_vector(&self, kg: &KnowledgeGraph, molecule: &Molecule) -> Option<Vec<f64>> {
        match self {
            EmbeddingProvider::Fingerprint(_) => Some(fingerprint_vector(molecule)),
            EmbeddingProvider::Table(t) => t
                .get(molecule.key().as_str())
                .or_else(|| drug_by_key(kg, molecule.key()).and_then(|d| t.get(&d.id)))
                .map(<[f64]>::to_vec),
        }
    }

    /// Anchor for the query, or why none is available.
    pub fn anchor(&self, kg: &KnowledgeGraph, molecule: &Molecule) -> Result<AnchorResult, EmbedError> {
        let table = self.table().ok_or(EmbedError::NoEmbeddedDrugs)?;
        let query = self.query_vector(kg, molecule).ok_or(EmbedError::NoEmbeddedDrugs)?;
        find_anchor(&query, kg, table, molecule)
    }
}

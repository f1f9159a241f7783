//! Caption database keyed by canonical molecule key.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chem::{key_of, CanonicalKey};
use crate::tsv;

pub const ANNOTATION_HEADER: [&str; 3] = ["smiles", "caption", "source"];

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("no valid annotation rows were found")]
    EmptyStore,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub key: CanonicalKey,
    pub captions: Vec<Caption>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub molecule_count: usize,
    pub caption_count: usize,
    pub mean_captions: f64,
    pub unparseable_rows: usize,
    pub duplicate_rows: usize,
    pub rejected_lines: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct AnnotationStore {
    records: Vec<AnnotationRecord>,
    index: HashMap<CanonicalKey, usize>,
    stats: StoreStats,
}

impl AnnotationStore {
    /// Reads `smiles<TAB>caption<TAB>source` rows. A header row is skipped.
    pub fn ingest<R: BufRead>(reader: R) -> Result<Self, AnnotationError> {
        let mut records: Vec<AnnotationRecord> = Vec::new();
        let mut index = HashMap::new();
        let mut stats = StoreStats::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let number = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields = tsv::split(&line);
            if number == 1 && fields[0].trim() == ANNOTATION_HEADER[0] {
                continue;
            }
            let smiles = fields[0].trim();
            let text = fields.get(1).map(|s| s.trim()).unwrap_or("");
            let source = fields.get(2).map(|s| s.trim()).unwrap_or("").to_string();
            if smiles.is_empty() || text.is_empty() {
                stats
                    .rejected_lines
                    .push((number, "missing SMILES or caption".into()));
                continue;
            }
            let key = match key_of(smiles) {
                Ok(key) => key,
                Err(e) => {
                    stats.unparseable_rows += 1;
                    stats.rejected_lines.push((number, e.to_string()));
                    continue;
                }
            };
            let idx = *index.entry(key.clone()).or_insert_with(|| {
                records.push(AnnotationRecord {
                    key,
                    captions: Vec::new(),
                });
                records.len() - 1
            });
            let captions = &mut records[idx].captions;
            if captions.iter().any(|c| c.text == text) {
                stats.duplicate_rows += 1;
                continue;
            }
            captions.push(Caption {
                source,
                text: text.to_string(),
            });
        }
        if records.is_empty() {
            return Err(AnnotationError::EmptyStore);
        }
        stats.molecule_count = records.len();
        stats.caption_count = records.iter().map(|r| r.captions.len()).sum();
        stats.mean_captions = stats.caption_count as f64 / stats.molecule_count as f64;
        Ok(AnnotationStore {
            records,
            index,
            stats,
        })
    }

    pub fn stats(&self) -> &StoreStats {
        &self.stats
    }

    pub fn record(&self, key: &CanonicalKey) -> Option<&AnnotationRecord> {
        self.index.get(key).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn contains(&self, key: &CanonicalKey) -> bool {
        self.index.contains_key(key)
    }

    /// Captions in ingestion order joined by a single space.
    pub fn lookup_caption(&self, key: &CanonicalKey) -> Option<String> {
        self.record(key).map(|r| {
            r.captions
                .iter()
                .map(|c| c.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
    }

    /// Writes the store in the ingestion format with canonical keys as SMILES.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", ANNOTATION_HEADER.join("\t"))?;
        for r in &self.records {
            for c in &r.captions {
                writeln!(out, "{}", tsv::join(&[r.key.as_str(), &c.text, &c.source]))?;
            }
        }
        out.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotationError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.write_snapshot(io::BufWriter::new(fs::File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        Self::ingest(BufReader::new(fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(rows: &[(&str, &str)]) -> Result<AnnotationStore, AnnotationError> {
        let mut text = String::from("smiles\tcaption\tsource\n");
        for (s, c) in rows {
            text.push_str(&format!("{s}\t{c}\ttest\n"));
        }
        AnnotationStore::ingest(text.as_bytes())
    }

    fn key(s: &str) -> CanonicalKey {
        key_of(s).unwrap()
    }

    #[test]
    fn spellings_group_into_one_record() {
        let s = store(&[("CCO", "A solvent."), ("OCC", "A fuel.")]).unwrap();
        assert_eq!(s.stats().molecule_count, 1);
        assert_eq!(s.stats().caption_count, 2);
        assert_eq!(s.lookup_caption(&key("CCO")).unwrap(), "A solvent. A fuel.");
    }

    #[test]
    fn unparseable_rows_are_counted() {
        let s = store(&[("C1CC", "Broken."), ("C", "Methane.")]).unwrap();
        assert_eq!(s.stats().unparseable_rows, 1);
        assert_eq!(s.stats().rejected_lines[0].0, 2);
        assert_eq!(s.lookup_caption(&key("C")).unwrap(), "Methane.");
        assert_eq!(s.lookup_caption(&key("N")), None);
    }

    #[test]
    fn empty_store_errors() {
        assert!(matches!(store(&[]), Err(AnnotationError::EmptyStore)));
        assert!(matches!(store(&[("C1CC", "x")]), Err(AnnotationError::EmptyStore)));
    }

    #[test]
    fn exact_duplicates_collapse() {
        let s = store(&[("CCO", "A solvent."), ("OCC", "A solvent."), ("CCO", "A solvent!")]).unwrap();
        assert_eq!(s.stats().caption_count, 2);
        assert_eq!(s.stats().duplicate_rows, 1);
    }

    #[test]
    fn escaped_captions_and_snapshot() {
        let s = store(&[("c1ccccc1", "Line one.\\nLine\\ttwo."), ("CC", "Ethane.")]).unwrap();
        assert_eq!(
            s.lookup_caption(&key("C1=CC=CC=C1")).unwrap(),
            "Line one.\nLine\ttwo."
        );
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf).unwrap();
        let back = AnnotationStore::ingest(buf.as_slice()).unwrap();
        assert_eq!(back.records(), s.records());
    }
}

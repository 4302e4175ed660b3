//! Shared experience memory with vector retrieval.
//!
//! Every agent reads from and (after reflection) writes to one store of
//! experience records — scenario description, planning process, final
//! decision, and evaluation scores — keyed by an L2-normalized embedding of
//! the scene text. Retrieval is an exact exhaustive cosine top-k: stores
//! stay desk-scale, so exactness is free and the results are testable
//! against a brute-force oracle.
//!
//! Persistence is line-delimited JSON: a header carrying embedder
//! provenance, then one record per line ordered by id. Loading a file
//! written under a different embedder is refused outright — the keys would
//! not be comparable.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Embedder, LlmError};
use crate::reflection::ScorePair;
use crate::sim::{MetaAction, VehicleId};

/// Default number of few-shot exemplars retrieved per decision.
pub const DEFAULT_K: usize = 3;
pub const FORMAT_VERSION: u32 = 1;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalDecision {
    pub action: MetaAction,
    pub justification: String,
}

/// One stored driving experience: the four semantic elements (scenario
/// description, planning process, final decision, evaluation score) plus
/// provenance and the retrieval embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub record_id: RecordId,
    pub agent_id: VehicleId,
    pub episode_id: String,
    pub frame: u32,
    pub scenario_description: String,
    pub planning_process: String,
    pub final_decision: FinalDecision,
    #[serde(flatten)]
    pub evaluation_score: ScorePair,
    /// True when the stored decision is a reflection-corrected version of
    /// the one actually taken.
    #[serde(default)]
    pub corrected: bool,
    pub embedding: Vec<f32>,
}

/// Retrieval result: records with their cosine similarity to the query,
/// best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedExperiences {
    pub items: Vec<(ExperienceRecord, f64)>,
    pub query: String,
}

impl RetrievedExperiences {
    /// Render for prompt injection as few-shot exemplars.
    pub fn prompt_text(&self) -> String {
        if self.items.is_empty() {
            return "(no relevant past experiences)".to_string();
        }
        self.items
            .iter()
            .map(|(r, sim)| {
                format!(
                    "- similarity {:.2}: decision {} ({}); scores safety {:.1}, efficiency {:.1}. Planning: {}",
                    sim,
                    r.final_decision.action.name(),
                    if r.final_decision.justification.is_empty() {
                        "no justification recorded"
                    } else {
                        &r.final_decision.justification
                    },
                    r.evaluation_score.safety,
                    r.evaluation_score.efficiency,
                    r.planning_process,
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("i/o error on memory file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed memory file: {0}")]
    Malformed(String),
    #[error("memory file was written by embedder {file:?} but {configured:?} is configured")]
    EmbedderMismatch { file: String, configured: String },
    #[error("embedding dimension mismatch: store holds {want}, record has {got}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("embedding provider failed: {0}")]
    Provider(#[from] LlmError),
    #[error("cannot normalize a zero-length embedding")]
    ZeroVector,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
struct Header {
    embedder_id: String,
    dim: usize,
    format_version: u32,
}

/// The shared vector store. Append-only within an episode; record ids are
/// unique and all embeddings share one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryStore {
    embedder_id: String,
    dim: usize,
    records: BTreeMap<RecordId, ExperienceRecord>,
}

impl MemoryStore {
    pub fn new(embedder_id: impl Into<String>, dim: usize) -> MemoryStore {
        MemoryStore { embedder_id: embedder_id.into(), dim, records: BTreeMap::new() }
    }

    pub fn for_embedder(embedder: &dyn Embedder) -> MemoryStore {
        MemoryStore::new(embedder.id(), embedder.dim())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> impl Iterator<Item = &ExperienceRecord> {
        self.records.values()
    }

    /// Smallest id strictly greater than everything stored.
    pub fn next_record_id(&self) -> RecordId {
        RecordId(self.records.keys().next_back().map_or(0, |r| r.0 + 1))
    }

    /// Append a record. Returns false (leaving the store unchanged) when
    /// the id is already present; errors on a dimension mismatch.
    pub fn insert(&mut self, record: ExperienceRecord) -> Result<bool, MemoryError> {
        if record.embedding.len() != self.dim {
            return Err(MemoryError::DimensionMismatch {
                want: self.dim,
                got: record.embedding.len(),
            });
        }
        if self.records.contains_key(&record.record_id) {
            return Ok(false);
        }
        self.records.insert(record.record_id, record);
        Ok(true)
    }

    /// Exact top-k by cosine similarity to a query vector; ties broken by
    /// smaller record id.
    pub fn retrieve_by_vector(&self, query: &[f32], k: usize) -> Vec<(&ExperienceRecord, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut scored: Vec<(&ExperienceRecord, f64)> = self
            .records
            .values()
            .map(|r| (r, cosine(query, &r.embedding)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.record_id.cmp(&b.0.record_id)));
        scored.truncate(k);
        scored
    }

    /// Embed the query text and retrieve the top-k most similar records.
    pub async fn retrieve(
        &self,
        query_text: &str,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<RetrievedExperiences, MemoryError> {
        if k == 0 || self.records.is_empty() {
            return Ok(RetrievedExperiences { items: Vec::new(), query: query_text.to_string() });
        }
        let query = embed(query_text, embedder).await?;
        let items = self
            .retrieve_by_vector(&query, k)
            .into_iter()
            .map(|(r, s)| (r.clone(), s))
            .collect();
        Ok(RetrievedExperiences { items, query: query_text.to_string() })
    }

    /// Write the store: a header line, then one record per line in id
    /// order. Byte-deterministic for a given store.
    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let mut out = Vec::new();
        let header = Header {
            embedder_id: self.embedder_id.clone(),
            dim: self.dim,
            format_version: FORMAT_VERSION,
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| MemoryError::Malformed(e.to_string()))?;
        out.push(b'\n');
        for record in self.records.values() {
            serde_json::to_writer(&mut out, record)
                .map_err(|e| MemoryError::Malformed(e.to_string()))?;
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    /// Read a store back. When `expected_embedder_id` is given, a file
    /// written under any other embedder is refused.
    pub fn load(path: &Path, expected_embedder_id: Option<&str>) -> Result<MemoryStore, MemoryError> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| MemoryError::Malformed("empty file (missing header)".into()))??;
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| MemoryError::Malformed(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(MemoryError::Malformed(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        if let Some(expected) = expected_embedder_id {
            if header.embedder_id != expected {
                return Err(MemoryError::EmbedderMismatch {
                    file: header.embedder_id,
                    configured: expected.to_string(),
                });
            }
        }
        let mut store = MemoryStore::new(header.embedder_id, header.dim);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ExperienceRecord = serde_json::from_str(&line)
                .map_err(|e| MemoryError::Malformed(format!("record line {}: {e}", n + 2)))?;
            let id = record.record_id;
            if !store.insert(record)? {
                return Err(MemoryError::Malformed(format!(
                    "duplicate record id {id} at line {}",
                    n + 2
                )));
            }
        }
        Ok(store)
    }

    /// Load `path` if it exists (validating provenance against `embedder`),
    /// otherwise start an empty store for it.
    pub fn open(path: &Path, embedder: &dyn Embedder) -> Result<MemoryStore, MemoryError> {
        if path.exists() {
            MemoryStore::load(path, Some(&embedder.id()))
        } else {
            Ok(MemoryStore::for_embedder(embedder))
        }
    }
}

/// Embed text and L2-normalize the result regardless of what the provider
/// returned. An all-zero vector cannot be a key and is rejected.
pub async fn embed(text: &str, embedder: &dyn Embedder) -> Result<Vec<f32>, MemoryError> {
    let mut v = embedder.embed(text).await?;
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    if (norm - 1.0).abs() > 1e-6 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    Ok(v)
}

/// Cosine similarity, accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

//! Proposition index: extracted triplets, their verbalized text, unit-norm
//! embeddings, and the map back to source chunks.
//!
//! Row `r` of the embedding matrix belongs to proposition `r`; prop_ids are
//! dense and assigned in (chunk order, extraction order).

mod build;
mod store;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, IndexError, Result};
use crate::ingest::Chunk;
use crate::llm::UsageSummary;
use crate::state::ScoredProp;
use crate::triplet::Triplet;

pub use build::{build_index, extract_triplets, BuildOptions, BuildStats};
pub use store::{load_index, save_index, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposition {
    pub prop_id: u32,
    pub triplet: Triplet,
    pub text: String,
    pub chunk_id: String,
}

/// "subject predicate object". Only placeholder-free triplets are indexed.
pub fn verbalize(t: &Triplet) -> Result<String> {
    if t.placeholder_count() > 0 {
        return Err(Error::Contract(format!("cannot verbalize `{t}`: it has placeholders")));
    }
    Ok(t.fields().join(" "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub format_version: u32,
    pub dim: usize,
    pub num_propositions: usize,
    pub num_chunks: usize,
    pub extractor_version: String,
    pub tokenizer_id: String,
    pub embedder_id: String,
    /// SHA-256 over chunk ids and texts in index order.
    pub corpus_digest: String,
    /// Identical facts from different chunks stay separate propositions.
    pub cross_chunk_duplicates: String,
    pub config: RunConfig,
    pub stats: BuildStats,
    /// File name to SHA-256, filled in on save.
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

/// Read-only candidate source for adaptive retrieval.
pub trait PropositionSearch {
    fn num_propositions(&self) -> usize;

    /// Top `n` by dot product, score descending then prop_id ascending.
    fn search_topn(&self, query: &[f32], n: usize) -> Result<Vec<ScoredProp>>;

    fn chunk_of(&self, prop_id: u32) -> &str;
}

/// Immutable after build or load; share it across queries by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletIndex {
    propositions: Vec<Proposition>,
    embeddings: Vec<f32>,
    chunks: Vec<Chunk>,
    chunk_pos: HashMap<String, usize>,
    meta: IndexMeta,
}

impl TripletIndex {
    /// Assembles an index, checking the cross-table invariants.
    pub fn from_parts(
        propositions: Vec<Proposition>,
        embeddings: Vec<f32>,
        chunks: Vec<Chunk>,
        meta: IndexMeta,
    ) -> Result<Self> {
        let corrupt = |m: String| Error::Index(IndexError::Corrupt(m));
        let n = propositions.len();
        if embeddings.len() != n * meta.dim {
            return Err(Error::Index(IndexError::CountMismatch(format!(
                "{n} propositions but {} embedding values at dimension {}",
                embeddings.len(),
                meta.dim
            ))));
        }
        if meta.num_propositions != n || meta.num_chunks != chunks.len() {
            return Err(Error::Index(IndexError::CountMismatch(format!(
                "metadata says {} propositions / {} chunks, found {n} / {}",
                meta.num_propositions,
                meta.num_chunks,
                chunks.len()
            ))));
        }
        let mut chunk_pos = HashMap::with_capacity(chunks.len());
        for (i, c) in chunks.iter().enumerate() {
            if chunk_pos.insert(c.chunk_id.clone(), i).is_some() {
                return Err(corrupt(format!("duplicate chunk id `{}`", c.chunk_id)));
            }
        }
        for (i, p) in propositions.iter().enumerate() {
            if p.prop_id as usize != i {
                return Err(corrupt(format!("prop_id {} at row {i}", p.prop_id)));
            }
            if !chunk_pos.contains_key(&p.chunk_id) {
                return Err(corrupt(format!("prop {} points at unknown chunk `{}`", i, p.chunk_id)));
            }
        }
        Ok(Self {
            propositions,
            embeddings,
            chunks,
            chunk_pos,
            meta,
        })
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn len(&self) -> usize {
        self.propositions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.propositions.is_empty()
    }

    pub fn propositions(&self) -> &[Proposition] {
        &self.propositions
    }

    pub fn proposition(&self, prop_id: u32) -> Option<&Proposition> {
        self.propositions.get(prop_id as usize)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_pos.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn embedding(&self, prop_id: u32) -> &[f32] {
        let d = self.meta.dim;
        let r = prop_id as usize;
        &self.embeddings[r * d..(r + 1) * d]
    }

    pub(crate) fn raw_embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn build_usage(&self) -> UsageSummary {
        self.meta.stats.usage
    }
}

/// Score order: higher first, then lower prop_id. `-0.0` and `0.0` tie; NaN
/// falls back to the total order so the sort stays well defined.
pub(crate) fn rank(a: &ScoredProp, b: &ScoredProp) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or_else(|| b.score.total_cmp(&a.score))
        .then(a.prop_id.cmp(&b.prop_id))
}

impl PropositionSearch for TripletIndex {
    fn num_propositions(&self) -> usize {
        self.len()
    }

    fn search_topn(&self, query: &[f32], n: usize) -> Result<Vec<ScoredProp>> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim() {
            return Err(Error::Index(IndexError::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            }));
        }
        let mut scored: Vec<ScoredProp> = (0..self.len() as u32)
            .map(|id| ScoredProp {
                prop_id: id,
                score: crate::llm::cosine(query, self.embedding(id)),
            })
            .collect();
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, rank);
            scored.truncate(n);
        }
        scored.sort_by(rank);
        Ok(scored)
    }

    fn chunk_of(&self, prop_id: u32) -> &str {
        &self.propositions[prop_id as usize].chunk_id
    }
}

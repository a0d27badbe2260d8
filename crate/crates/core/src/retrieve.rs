//! Adaptive retrieval: pool candidates from every query proposition, rank them
//! globally, and walk the ranking until `k` distinct source chunks are covered.

use std::collections::{HashMap, HashSet};

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::PropositionSearch;
use crate::llm::{EmbeddingVector, Gateway};
use crate::state::ScoredProp;
use crate::triplet::{Field, Triplet, TripletClass};

/// Known fields of a searchable triplet, in order, joined by single spaces.
pub fn query_proposition(t: &Triplet) -> Result<String> {
    if t.class() != TripletClass::Searchable {
        return Err(Error::Contract(format!(
            "query proposition needs exactly one placeholder, `{t}` has {}",
            t.placeholder_count()
        )));
    }
    let known: Vec<&str> = crate::triplet::Slot::ALL
        .iter()
        .filter_map(|&s| match t.field(s) {
            Field::Known(v) => Some(v),
            _ => None,
        })
        .collect();
    Ok(known.join(" "))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// In walk order (score descending, prop_id ascending).
    pub propositions: Vec<ScoredProp>,
    /// In first-touch order, no duplicates.
    pub chunks: Vec<String>,
    /// The walk ran out of candidates before reaching `k` chunks.
    pub exhausted: bool,
}

/// Runs the pooled walk for already-embedded query vectors.
///
/// Each query contributes its top `pool_width` hits; a proposition seen from
/// several queries keeps its best score. If the walk runs dry before `k`
/// chunks, the width doubles (capped at the index size) and the pool is
/// rebuilt. Propositions from `excluded` chunks are skipped.
pub fn adaptive_retrieve<S: PropositionSearch + ?Sized>(
    index: &S,
    queries: &[&[f32]],
    k: usize,
    pool_width: usize,
    excluded: &HashSet<String>,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let total = index.num_propositions();
    if queries.is_empty() || total == 0 {
        return Ok(RetrievalResult {
            exhausted: true,
            ..RetrievalResult::default()
        });
    }
    let mut width = pool_width.clamp(1, total);
    loop {
        let ranked = candidate_pool(index, queries, width)?;
        let mut chunks: IndexSet<&str> = IndexSet::new();
        let mut props = Vec::new();
        for cand in &ranked {
            if chunks.len() >= k {
                break;
            }
            let chunk = index.chunk_of(cand.prop_id);
            if excluded.contains(chunk) {
                continue;
            }
            chunks.insert(chunk);
            props.push(*cand);
        }
        if chunks.len() >= k || width >= total {
            return Ok(RetrievalResult {
                propositions: props,
                exhausted: chunks.len() < k,
                chunks: chunks.into_iter().map(str::to_string).collect(),
            });
        }
        width = width.saturating_mul(2).min(total);
        tracing::debug!(width, "widening candidate pool");
    }
}

/// Union of every query's top `width` hits, each proposition at its best
/// score, ranked by score descending then prop_id ascending.
pub fn candidate_pool<S: PropositionSearch + ?Sized>(
    index: &S,
    queries: &[&[f32]],
    width: usize,
) -> Result<Vec<ScoredProp>> {
    let mut pool: HashMap<u32, f32> = HashMap::new();
    for q in queries {
        for hit in index.search_topn(q, width)? {
            pool.entry(hit.prop_id)
                .and_modify(|s| *s = s.max(hit.score))
                .or_insert(hit.score);
        }
    }
    let mut ranked: Vec<ScoredProp> = pool
        .into_iter()
        .map(|(prop_id, score)| ScoredProp { prop_id, score })
        .collect();
    ranked.sort_by(crate::index::rank);
    Ok(ranked)
}

/// Embeds the query texts and runs [`adaptive_retrieve`].
pub fn retrieve_texts<S: PropositionSearch + ?Sized>(
    gateway: &Gateway,
    index: &S,
    queries: &[String],
    k: usize,
    pool_width: usize,
    excluded: &HashSet<String>,
) -> Result<RetrievalResult> {
    if queries.is_empty() || index.num_propositions() == 0 {
        return adaptive_retrieve(index, &[], k, pool_width, excluded);
    }
    let vectors: Vec<EmbeddingVector> = gateway.embed(queries)?;
    let slices: Vec<&[f32]> = vectors.iter().map(EmbeddingVector::as_slice).collect();
    adaptive_retrieve(index, &slices, k, pool_width, excluded)
}

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ChunkingConfig;

/// Which backend served the run. Recorded for provenance only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock {
        transcript: Option<PathBuf>,
        embedding_dim: usize,
        strict: bool,
    },
    Live {
        endpoint: String,
        model: String,
        embedding_model: String,
        /// Name of the environment variable holding the key; the key itself is never stored.
        api_key_env: String,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock {
            transcript: None,
            embedding_dim: crate::llm::HashEmbedder::DEFAULT_DIM,
            strict: true,
        }
    }
}

/// Every knob of a build or query run. Serialized into index metadata and reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Unique source chunks to cover per round.
    pub k: usize,
    /// Cap on retrieve-then-resolve rounds.
    pub max_rounds: u32,
    pub chunk_size: usize,
    pub overlap: usize,
    /// Initial per-query candidate pool is `pool_mult * k`.
    pub pool_mult: usize,
    pub workers: usize,
    /// Exclude chunks retrieved in earlier rounds of the same query.
    pub dedup_rounds: bool,
    /// Substitute learned bindings into fuzzy triplets without a model call.
    pub propagate_bindings: bool,
    pub prepend_title: bool,
    /// Per-chunk character cap in the resolving prompt.
    pub chunk_char_budget: Option<usize>,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_rounds: 3,
            chunk_size: 1200,
            overlap: 100,
            pool_mult: 8,
            workers: 4,
            dedup_rounds: false,
            propagate_bindings: false,
            prepend_title: true,
            chunk_char_budget: None,
            backend: BackendConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.chunk_size == 0 {
            return bad("chunk size must be at least 1");
        }
        if self.overlap >= self.chunk_size {
            return bad("overlap must be smaller than chunk size");
        }
        if self.pool_mult == 0 {
            return bad("pool multiplier must be at least 1");
        }
        if self.workers == 0 {
            return bad("worker count must be at least 1");
        }
        Ok(())
    }

    pub fn pool_width(&self) -> usize {
        self.pool_mult.saturating_mul(self.k)
    }

    pub fn chunking(&self) -> ChunkingConfig {
        ChunkingConfig {
            chunk_size: self.chunk_size,
            overlap: self.overlap,
            prepend_title: self.prepend_title,
        }
    }
}

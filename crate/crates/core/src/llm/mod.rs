//! Everything that talks to a language model or an embedding model.
//!
//! Prompts are rendered from fixed templates, sent through a [`Gateway`] that
//! owns retry and usage metering, and the replies are parsed back into
//! triplets. Two backends exist: an HTTP client for chat-completion style
//! endpoints and a transcript-driven mock used by tests and offline runs.

mod embed;
mod gateway;
mod live;
mod mock;
mod parse;
mod prompts;
mod usage;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use embed::{cosine, EmbeddingVector, HashEmbedder};
pub use gateway::{ChatBackend, CompletionResult, Embedder, Gateway, RawCompletion, RetryPolicy};
pub use live::{LiveBackend, LiveConfig};
pub use mock::{MockBackend, MockEntry, Transcript};
pub use parse::{parse_decomposition, parse_extraction, parse_resolution, ResolverOutput};
pub use prompts::{
    bindings_hash, format_resolution_blocks, format_triples_block, key_hash, render_clues,
    render_prompt, Bindings, Prompt, TemplateId, EXTRACTOR_VERSION,
};
pub use usage::{weighted_cost, CostBreakdown, UsageEntry, UsageLedger, UsageSummary, OUTPUT_TOKEN_WEIGHT};

/// Which pipeline stage an LLM call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Extract,
    Decompose,
    Resolve,
    Answer,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Extract => "extract",
            Phase::Decompose => "decompose",
            Phase::Resolve => "resolve",
            Phase::Answer => "answer",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

//! Triplet-driven retrieval-augmented question answering.
//!
//! Offline, a corpus is chunked, each chunk is turned into
//! `subject | predicate | object` facts by a language model, and every fact is
//! verbalized and embedded into a [`TripletIndex`]. Online, a question is
//! decomposed into triplets with placeholders, which are resolved over a few
//! retrieve-then-resolve rounds before a final answer is generated.

pub mod config;
pub mod error;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod resolve;
pub mod retrieve;
pub mod state;
pub mod triplet;

pub use config::{BackendConfig, RunConfig};
pub use error::{Error, IndexError, LlmError, Result};
pub use eval::{exact_match, f1, normalize_answer, run_eval, EvalReport, QAExample};
pub use index::{build_index, load_index, save_index, verbalize, Proposition, PropositionSearch, TripletIndex};
pub use ingest::{chunk_document, count_tokens, load_corpus, Chunk, Corpus, Document};
pub use resolve::{QueryEngine, QueryResult, TraceEvent};
pub use retrieve::{adaptive_retrieve, query_proposition, RetrievalResult};
pub use state::{is_terminal, update_state, ResolutionState};
pub use triplet::{classify, count_placeholders, Triplet, TripletClass};

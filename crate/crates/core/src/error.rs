use std::path::PathBuf;

use thiserror::Error;

use crate::llm::Phase;
use crate::triplet::Slot;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TripletError {
    #[error("triplet {0:?} is empty after trimming")]
    EmptyField(Slot),
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` has no binding for slot `{slot}`")]
    MissingSlot { template: String, slot: String },
}

/// Failures of the chat-completion or embedding backends.
#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("prompt exceeds the model context window: {body}")]
    ContextLength { body: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no transcript entry for template `{template_id}` (bindings hash {bindings_hash})")]
    UnmatchedPrompt {
        template_id: String,
        bindings_hash: String,
    },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding request must contain at least one text")]
    EmptyBatch,
}

impl LlmError {
    /// Transport and server-side failures are worth retrying; everything else is final.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport { .. } => true,
            LlmError::Status { status, .. } => *status >= 500 || *status == 408 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index files disagree: {0}")]
    CountMismatch(String),
    #[error("checksum mismatch in {file}")]
    Checksum { file: String },
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("corrupt index: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Triplet(#[from] TripletError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{phase} failed: {source}")]
    Llm {
        phase: Phase,
        #[source]
        source: LlmError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("decomposition produced no parseable triplets")]
    DecompositionFailed,
    #[error("answer generation returned empty text")]
    EmptyAnswer,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("index build aborted: {source}; completed chunks checkpointed in {}", checkpoint.display())]
    BuildAborted {
        checkpoint: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn llm(phase: Phase, source: LlmError) -> Self {
        Error::Llm { phase, source }
    }
}

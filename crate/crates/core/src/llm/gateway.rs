use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, LlmError, Result};
use crate::ingest::count_tokens;

use super::embed::EmbeddingVector;
use super::prompts::{render_prompt, Bindings, Prompt, TemplateId};
use super::usage::{UsageEntry, UsageLedger, UsageSummary};
use super::Phase;

/// A completion as returned by a backend, before metering.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawCompletion {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<RawCompletion, LlmError>;
}

pub trait Embedder: Send + Sync {
    /// Identifier recorded in index metadata.
    fn id(&self) -> String;

    /// Known output dimension, if fixed in advance.
    fn dimension(&self) -> Option<usize>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError>;
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub text: String,
    pub usage: UsageSummary,
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_attempts: 1,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op`, retrying transient failures with exponential backoff.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < attempts => {
                    let delay = self.base_delay * 2u32.pow(attempt - 1);
                    tracing::warn!(attempt, error = %e, ?delay, "transient failure, retrying");
                    std::thread::sleep(delay);
                }
                Err(LlmError::Transport { message, .. }) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Single entry point for completions and embeddings.
///
/// Every completion is metered into the gateway's ledger; callers that need a
/// per-query view also get the usage back in the [`CompletionResult`].
#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
    retry: RetryPolicy,
    ledger: Arc<UsageLedger>,
    embed_batch_size: usize,
}

impl Gateway {
    pub const EMBED_BATCH: usize = 64;

    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            chat,
            embedder,
            retry: RetryPolicy::default(),
            ledger: Arc::new(UsageLedger::new()),
            embed_batch_size: Self::EMBED_BATCH,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn embedder_id(&self) -> String {
        self.embedder.id()
    }

    pub fn embedder_dimension(&self) -> Option<usize> {
        self.embedder.dimension()
    }

    pub fn render(&self, template: TemplateId, bindings: &Bindings) -> Result<Prompt> {
        Ok(render_prompt(template, bindings)?)
    }

    /// Sends a rendered prompt. Usage is recorded even if the caller later
    /// fails to parse the reply.
    pub fn complete(&self, phase: Phase, prompt: &Prompt) -> Result<CompletionResult> {
        let started = Instant::now();
        let raw = self
            .retry
            .run(|| self.chat.complete(prompt))
            .map_err(|e| Error::llm(phase, e))?;
        let estimated = raw.input_tokens.is_none() || raw.output_tokens.is_none();
        let usage = UsageSummary {
            input_tokens: raw
                .input_tokens
                .unwrap_or_else(|| count_tokens(&prompt.text) as u64),
            output_tokens: raw
                .output_tokens
                .unwrap_or_else(|| count_tokens(&raw.text) as u64),
            estimated,
        };
        self.ledger.record(UsageEntry {
            phase,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            estimated,
        });
        Ok(CompletionResult {
            text: raw.text,
            usage,
            latency: started.elapsed(),
        })
    }

    /// Embeds `texts` in batches; output order matches input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let phase = Phase::Extract;
        if texts.is_empty() {
            return Err(Error::llm(phase, LlmError::EmptyBatch));
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::llm(phase, LlmError::EmptyText));
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.embed_batch_size) {
            out.extend(self.embed_checked(batch)?);
        }
        Ok(out)
    }

    /// One batch, validated for arity and a single consistent dimension.
    pub fn embed_checked(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>> {
        let wrap = |e| Error::llm(Phase::Extract, e);
        let raw = self
            .retry
            .run(|| self.embedder.embed_batch(batch))
            .map_err(wrap)?;
        if raw.len() != batch.len() {
            return Err(wrap(LlmError::Malformed(format!(
                "asked for {} embeddings, got {}",
                batch.len(),
                raw.len()
            ))));
        }
        let expected = self
            .embedder
            .dimension()
            .or_else(|| raw.first().map(Vec::len))
            .unwrap_or(0);
        raw.into_iter()
            .map(|v| {
                if v.len() != expected {
                    return Err(wrap(LlmError::DimensionMismatch {
                        expected,
                        got: v.len(),
                    }));
                }
                EmbeddingVector::normalized(v).map_err(wrap)
            })
            .collect()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.embed(&[text.to_string()])?;
        Ok(v.remove(0))
    }
}

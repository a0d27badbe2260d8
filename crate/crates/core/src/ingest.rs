//! Corpus loading and fixed-length overlapping token chunking.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Splits text into tokens, reporting byte ranges so chunk text can be sliced
/// out of the original document without re-joining.
pub trait Tokenizer: Send + Sync {
    /// Stable identifier recorded in index metadata.
    fn id(&self) -> &str;

    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count_tokens(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

/// Unicode-whitespace word segmentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn id(&self) -> &str {
        "whitespace-v1"
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..text.len());
        }
        spans
    }

    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Token count under the default whitespace tokenizer.
pub fn count_tokens(text: &str) -> usize {
    WhitespaceTokenizer.count_tokens(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "text")]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    /// Half-open token offsets into the source document.
    pub token_span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    /// Prepend `"{title}\n"` to every chunk of a titled document.
    pub prepend_title: bool,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: 1200,
            overlap: 100,
            prepend_title: true,
        }
    }
}

/// Token-offset windows `[start, end)` for a document of `n_tokens` tokens.
pub fn chunk_spans(n_tokens: usize, chunk_size: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(Error::InvalidArgument(format!(
            "overlap ({overlap}) must be smaller than chunk size ({chunk_size})"
        )));
    }
    let stride = chunk_size - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < n_tokens {
        let end = (start + chunk_size).min(n_tokens);
        spans.push((start, end));
        if end == n_tokens {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

pub fn chunk_document(
    doc: &Document,
    config: &ChunkingConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>> {
    let tokens = tokenizer.token_spans(&doc.body);
    let spans = chunk_spans(tokens.len(), config.chunk_size, config.overlap)?;
    let title = doc.title.trim();
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(ordinal, (start, end))| {
            let body = &doc.body[tokens[start].start..tokens[end - 1].end];
            let text = if config.prepend_title && !title.is_empty() {
                format!("{title}\n{body}")
            } else {
                body.to_string()
            };
            Chunk {
                chunk_id: format!("{}#{}", doc.doc_id, ordinal),
                doc_id: doc.doc_id.clone(),
                text,
                token_span: (start, end),
            }
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct PreChunked {
    chunk_id: String,
    doc_id: String,
    text: String,
}

/// Either raw documents to be chunked or chunks supplied by the dataset.
#[derive(Debug, Clone)]
pub enum Corpus {
    Documents(Vec<Document>),
    Chunks(Vec<Chunk>),
}

impl Corpus {
    /// Chunks the corpus (or passes pre-split chunks through).
    pub fn into_chunks(self, config: &ChunkingConfig, tokenizer: &dyn Tokenizer) -> Result<Vec<Chunk>> {
        match self {
            Corpus::Chunks(chunks) => Ok(chunks),
            Corpus::Documents(docs) => {
                let mut out = Vec::new();
                for doc in &docs {
                    out.extend(chunk_document(doc, config, tokenizer)?);
                }
                Ok(out)
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Corpus::Documents(d) => d.is_empty(),
            Corpus::Chunks(c) => c.is_empty(),
        }
    }
}

/// Reads a JSONL corpus. Lines carrying `chunk_id` are treated as pre-split chunks.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut chunks = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{}:{}", path.display(), lineno + 1);
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::json(ctx(), e))?;
        if value.get("chunk_id").is_some() {
            let c: PreChunked = serde_json::from_value(value).map_err(|e| Error::json(ctx(), e))?;
            let n = count_tokens(&c.text);
            chunks.push(Chunk {
                chunk_id: c.chunk_id,
                doc_id: c.doc_id,
                text: c.text,
                token_span: (0, n),
            });
        } else {
            docs.push(serde_json::from_value(value).map_err(|e| Error::json(ctx(), e))?);
        }
    }
    match (docs.is_empty(), chunks.is_empty()) {
        (false, false) => Err(Error::InvalidArgument(format!(
            "{} mixes documents and pre-split chunks",
            path.display()
        ))),
        (true, false) => Ok(Corpus::Chunks(chunks)),
        _ => {
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = docs.iter().find(|d: &&Document| !seen.insert(d.doc_id.as_str())) {
                return Err(Error::InvalidArgument(format!("duplicate doc_id `{}`", dup.doc_id)));
            }
            Ok(Corpus::Documents(docs))
        }
    }
}

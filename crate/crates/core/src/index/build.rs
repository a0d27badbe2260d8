use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{verbalize, IndexMeta, Proposition, TripletIndex, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::error::{Error, LlmError, Result};
use crate::ingest::{Chunk, Corpus, Tokenizer, WhitespaceTokenizer};
use crate::llm::{
    parse_extraction, Bindings, Gateway, Phase, TemplateId, UsageSummary, EXTRACTOR_VERSION,
};
use crate::triplet::Triplet;

/// Corpus and build statistics, in the shape of the usual dataset tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub documents: usize,
    pub chunks: usize,
    pub tokens: usize,
    pub extracted_triplets: usize,
    /// Extraction lines dropped for placeholders or empty fields.
    pub dropped_lines: usize,
    pub usage: UsageSummary,
    pub weighted_cost: u64,
    /// Chunks whose extraction was reused from a checkpoint in this run.
    #[serde(skip)]
    pub resumed_chunks: usize,
}

pub struct BuildOptions<'a> {
    /// Directory for resumable progress. Without one, a failure loses all work.
    pub checkpoint_dir: Option<PathBuf>,
    pub tokenizer: &'a dyn Tokenizer,
}

impl Default for BuildOptions<'_> {
    fn default() -> Self {
        Self {
            checkpoint_dir: None,
            tokenizer: &WhitespaceTokenizer,
        }
    }
}

/// One extraction call's outcome for a chunk.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Extraction {
    chunk_id: String,
    triplets: Vec<Triplet>,
    dropped: usize,
    usage: UsageSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    corpus_digest: String,
    extractor_version: String,
    embedder_id: String,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingBatch {
    batch: usize,
    digest: String,
    vectors: Vec<Vec<f32>>,
}

/// Placeholder-free triplets from one extraction call on `chunk`.
pub fn extract_triplets(gateway: &Gateway, chunk: &Chunk) -> Result<Vec<Triplet>> {
    Ok(extract(gateway, chunk)?.triplets)
}

fn extract(gateway: &Gateway, chunk: &Chunk) -> Result<Extraction> {
    if chunk.text.trim().is_empty() {
        return Ok(Extraction {
            chunk_id: chunk.chunk_id.clone(),
            triplets: Vec::new(),
            dropped: 0,
            usage: UsageSummary::default(),
        });
    }
    let bindings: Bindings = [("passage".to_string(), chunk.text.clone())].into_iter().collect();
    let prompt = gateway.render(TemplateId::Extract, &bindings)?;
    let reply = gateway.complete(Phase::Extract, &prompt)?;
    let (triplets, dropped) = parse_extraction(&reply.text);
    if triplets.is_empty() {
        tracing::debug!(chunk = %chunk.chunk_id, "extraction produced no triplets");
    }
    Ok(Extraction {
        chunk_id: chunk.chunk_id.clone(),
        triplets,
        dropped,
        usage: reply.usage,
    })
}

fn corpus_digest(chunks: &[Chunk]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c.chunk_id.as_bytes());
        h.update([0x1f]);
        h.update(c.text.as_bytes());
        h.update([0x1e]);
    }
    hex::encode(h.finalize())
}

fn text_digest(texts: &[String]) -> String {
    let mut h = Sha256::new();
    for t in texts {
        h.update(t.as_bytes());
        h.update([0x1e]);
    }
    hex::encode(&h.finalize()[..16])
}

/// Append-only JSONL log; each record is written with a single `write_all`.
struct Log {
    path: PathBuf,
    file: Mutex<File>,
}

impl Log {
    fn open(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    fn append<T: Serialize>(&self, row: &T) -> Result<()> {
        let mut line = serde_json::to_vec(row).map_err(|e| Error::json("checkpoint record", e))?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(&line).map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads complete records; a torn final line from an interrupted write is ignored.
fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable checkpoint line"),
        }
    }
    Ok(out)
}

struct Checkpoint {
    dir: PathBuf,
    extractions: Log,
    embeddings: Log,
}

impl Checkpoint {
    fn open(dir: &Path, header: &CheckpointHeader) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header_path = dir.join("header.json");
        if header_path.exists() {
            let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
            let found: CheckpointHeader =
                serde_json::from_str(&text).map_err(|e| Error::json("checkpoint header", e))?;
            if found != *header {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint in {} was made for a different corpus or extractor",
                    dir.display()
                )));
            }
        } else {
            let text = serde_json::to_string_pretty(header).map_err(|e| Error::json("checkpoint header", e))?;
            fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            extractions: Log::open(dir.join("extractions.jsonl"))?,
            embeddings: Log::open(dir.join("embeddings.jsonl"))?,
        })
    }

    fn wrap(&self, err: Error) -> Error {
        Error::BuildAborted {
            checkpoint: self.dir.clone(),
            source: Box::new(err),
        }
    }
}

/// Chunks, extracts, verbalizes and embeds `corpus`.
///
/// Extraction runs on `config.workers` threads. With a checkpoint directory,
/// each finished chunk and embedding batch is persisted as it completes and
/// reused by the next run over the same corpus.
pub fn build_index(
    corpus: Corpus,
    gateway: &Gateway,
    config: &RunConfig,
    opts: &BuildOptions<'_>,
) -> Result<(TripletIndex, BuildStats)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("corpus has no documents".into()));
    }
    let tokenizer = opts.tokenizer;
    let mut stats = BuildStats::default();
    match &corpus {
        Corpus::Documents(docs) => {
            stats.documents = docs.len();
            stats.tokens = docs.iter().map(|d| tokenizer.count_tokens(&d.body)).sum();
        }
        Corpus::Chunks(chunks) => {
            let mut ids: Vec<&str> = chunks.iter().map(|c| c.doc_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            stats.documents = ids.len();
            stats.tokens = chunks.iter().map(|c| tokenizer.count_tokens(&c.text)).sum();
        }
    }
    let chunks = corpus.into_chunks(&config.chunking(), tokenizer)?;
    stats.chunks = chunks.len();
    let digest = corpus_digest(&chunks);

    let checkpoint = match &opts.checkpoint_dir {
        Some(dir) => Some(Checkpoint::open(
            dir,
            &CheckpointHeader {
                corpus_digest: digest.clone(),
                extractor_version: EXTRACTOR_VERSION.to_string(),
                embedder_id: gateway.embedder_id(),
            },
        )?),
        None => None,
    };
    let abort = |e: Error| match &checkpoint {
        Some(cp) => cp.wrap(e),
        None => e,
    };

    let mut done: HashMap<String, Extraction> = HashMap::new();
    if let Some(cp) = &checkpoint {
        for ex in read_log::<Extraction>(&cp.extractions.path)? {
            done.insert(ex.chunk_id.clone(), ex);
        }
    }
    stats.resumed_chunks = chunks.iter().filter(|c| done.contains_key(&c.chunk_id)).count();
    let pending: Vec<&Chunk> = chunks.iter().filter(|c| !done.contains_key(&c.chunk_id)).collect();
    tracing::info!(chunks = chunks.len(), pending = pending.len(), "extracting triplets");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let fresh: Vec<Extraction> = pool
        .install(|| {
            pending
                .par_iter()
                .map(|chunk| {
                    let ex = extract(gateway, chunk)?;
                    if let Some(cp) = &checkpoint {
                        cp.extractions.append(&ex)?;
                    }
                    Ok(ex)
                })
                .collect::<Result<Vec<_>>>()
        })
        .map_err(abort)?;
    for ex in fresh {
        done.insert(ex.chunk_id.clone(), ex);
    }

    let mut propositions = Vec::new();
    for chunk in &chunks {
        let ex = &done[&chunk.chunk_id];
        stats.dropped_lines += ex.dropped;
        stats.usage.add(&ex.usage);
        for t in &ex.triplets {
            propositions.push(Proposition {
                prop_id: propositions.len() as u32,
                text: verbalize(t)?,
                triplet: t.clone(),
                chunk_id: chunk.chunk_id.clone(),
            });
        }
    }
    stats.extracted_triplets = propositions.len();
    stats.weighted_cost = stats.usage.weighted_cost();

    let texts: Vec<String> = propositions.iter().map(|p| p.text.clone()).collect();
    let cached: HashMap<(usize, String), Vec<Vec<f32>>> = match &checkpoint {
        Some(cp) => read_log::<EmbeddingBatch>(&cp.embeddings.path)?
            .into_iter()
            .map(|b| ((b.batch, b.digest), b.vectors))
            .collect(),
        None => HashMap::new(),
    };
    let mut embeddings: Vec<f32> = Vec::new();
    let mut dim = gateway.embedder_dimension();
    for (b, batch) in texts.chunks(Gateway::EMBED_BATCH).enumerate() {
        let digest = text_digest(batch);
        let vectors: Vec<Vec<f32>> = match cached.get(&(b, digest.clone())) {
            Some(v) if v.len() == batch.len() => v.clone(),
            _ => {
                let v: Vec<Vec<f32>> = gateway
                    .embed(batch)
                    .map_err(abort)?
                    .into_iter()
                    .map(|e| e.into_inner())
                    .collect();
                if let Some(cp) = &checkpoint {
                    let record = EmbeddingBatch {
                        batch: b,
                        digest,
                        vectors: v.clone(),
                    };
                    cp.embeddings.append(&record).map_err(abort)?;
                }
                v
            }
        };
        for v in vectors {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(Error::llm(
                    Phase::Extract,
                    LlmError::DimensionMismatch { expected, got: v.len() },
                ));
            }
            embeddings.extend(v);
        }
    }

    let meta = IndexMeta {
        format_version: FORMAT_VERSION,
        dim: dim.unwrap_or(0),
        num_propositions: propositions.len(),
        num_chunks: chunks.len(),
        extractor_version: EXTRACTOR_VERSION.to_string(),
        tokenizer_id: tokenizer.id().to_string(),
        embedder_id: gateway.embedder_id(),
        corpus_digest: digest,
        cross_chunk_duplicates: "kept".to_string(),
        config: config.clone(),
        stats: stats.clone(),
        checksums: Default::default(),
    };
    let index = TripletIndex::from_parts(propositions, embeddings, chunks, meta)?;
    Ok((index, stats))
}

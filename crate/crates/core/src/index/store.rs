use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{IndexMeta, Proposition, TripletIndex};
use crate::error::{Error, IndexError, Result};
use crate::ingest::Chunk;
use crate::triplet::Triplet;

pub const FORMAT_VERSION: u32 = 1;

const META: &str = "meta.json";
const PROPS: &str = "propositions.jsonl";
const CHUNKS: &str = "chunks.jsonl";
const EMB: &str = "embeddings.bin";

#[derive(Serialize, Deserialize)]
struct PropRecord {
    prop_id: u32,
    subject: String,
    predicate: String,
    object: String,
    text: String,
    chunk_id: String,
}

#[derive(Serialize, Deserialize)]
struct ChunkRecord {
    chunk_id: String,
    doc_id: String,
    text: String,
    #[serde(default)]
    token_span: Option<(usize, usize)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn jsonl<T: Serialize>(rows: impl Iterator<Item = T>, what: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, &row).map_err(|e| Error::json(what, e))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Header `[rows: u32][dim: u32]`, then row-major f32, all little-endian.
fn encode_embeddings(rows: usize, dim: usize, values: &[f32]) -> Result<Vec<u8>> {
    let too_big = |what| Error::InvalidArgument(format!("{what} does not fit the u32 header"));
    let rows32 = u32::try_from(rows).map_err(|_| too_big("row count"))?;
    let dim32 = u32::try_from(dim).map_err(|_| too_big("dimension"))?;
    let mut out = Vec::with_capacity(8 + values.len() * 4);
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode_embeddings(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let count = |m: String| Error::Index(IndexError::CountMismatch(m));
    if bytes.len() < 8 {
        return Err(count(format!("{EMB} is {} bytes, shorter than its header", bytes.len())));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    let expected = rows as u64 * dim as u64 * 4;
    if body.len() as u64 != expected {
        return Err(count(format!(
            "{EMB} header declares {rows}x{dim} floats ({expected} bytes) but holds {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok((rows, dim, values))
}

/// Writes the four index files. Output is byte-identical for identical indices.
pub fn save_index(index: &TripletIndex, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let props = jsonl(
        index.propositions().iter().map(|p| PropRecord {
            prop_id: p.prop_id,
            subject: p.triplet.subject().to_string(),
            predicate: p.triplet.predicate().to_string(),
            object: p.triplet.object().to_string(),
            text: p.text.clone(),
            chunk_id: p.chunk_id.clone(),
        }),
        PROPS,
    )?;
    let chunks = jsonl(
        index.chunks().iter().map(|c| ChunkRecord {
            chunk_id: c.chunk_id.clone(),
            doc_id: c.doc_id.clone(),
            text: c.text.clone(),
            token_span: Some(c.token_span),
        }),
        CHUNKS,
    )?;
    let emb = encode_embeddings(index.len(), index.dim(), index.raw_embeddings())?;

    let mut meta = index.meta().clone();
    meta.checksums = [(PROPS, &props), (CHUNKS, &chunks), (EMB, &emb)]
        .into_iter()
        .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
        .collect();
    let meta_bytes = serde_json::to_vec_pretty(&meta).map_err(|e| Error::json(META, e))?;

    for (name, bytes) in [(PROPS, props), (CHUNKS, chunks), (EMB, emb), (META, meta_bytes)] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(bytes: &[u8], name: &str) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Index(IndexError::Corrupt(format!("{name}: {e}"))))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{name}:{}", i + 1), e)))
        .collect()
}

/// Loads an index written by [`save_index`]. Structural consistency is checked
/// before checksums so truncation reports as a count mismatch.
pub fn load_index(dir: &Path) -> Result<TripletIndex> {
    let meta_bytes = read(dir, META)?;
    let version: serde_json::Value =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::json(META, e))?;
    let found = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(Error::Index(IndexError::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        }));
    }
    let meta: IndexMeta = serde_json::from_value(version).map_err(|e| Error::json(META, e))?;

    let props_bytes = read(dir, PROPS)?;
    let chunk_bytes = read(dir, CHUNKS)?;
    let emb_bytes = read(dir, EMB)?;

    let (rows, dim, values) = decode_embeddings(&emb_bytes)?;
    let count = |m: String| Error::Index(IndexError::CountMismatch(m));
    if rows != meta.num_propositions || dim != meta.dim {
        return Err(count(format!(
            "{EMB} is {rows}x{dim}, metadata says {}x{}",
            meta.num_propositions, meta.dim
        )));
    }
    let prop_records: Vec<PropRecord> = parse_jsonl(&props_bytes, PROPS)?;
    let chunk_records: Vec<ChunkRecord> = parse_jsonl(&chunk_bytes, CHUNKS)?;
    if prop_records.len() != rows {
        return Err(count(format!("{PROPS} has {} rows, {EMB} has {rows}", prop_records.len())));
    }

    for (name, bytes) in [(PROPS, &props_bytes), (CHUNKS, &chunk_bytes), (EMB, &emb_bytes)] {
        if let Some(expected) = meta.checksums.get(name) {
            if *expected != sha256_hex(bytes) {
                return Err(Error::Index(IndexError::Checksum { file: name.to_string() }));
            }
        }
    }

    let propositions = prop_records
        .into_iter()
        .map(|r| {
            Ok(Proposition {
                prop_id: r.prop_id,
                triplet: Triplet::new(&r.subject, &r.predicate, &r.object)?,
                text: r.text,
                chunk_id: r.chunk_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chunks = chunk_records
        .into_iter()
        .map(|r| {
            let span = r.token_span.unwrap_or((0, crate::ingest::count_tokens(&r.text)));
            Chunk {
                chunk_id: r.chunk_id,
                doc_id: r.doc_id,
                text: r.text,
                token_span: span,
            }
        })
        .collect();
    TripletIndex::from_parts(propositions, values, chunks, meta)
}

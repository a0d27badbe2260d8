//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tripletrag::index::{build_index, BuildOptions, IndexMeta, Proposition, FORMAT_VERSION};
use tripletrag::ingest::{load_corpus, Chunk};
use tripletrag::llm::{EmbeddingVector, Gateway, HashEmbedder, MockBackend, RetryPolicy};
use tripletrag::state::ScoredProp;
use tripletrag::{verbalize, RunConfig, Triplet, TripletIndex};

pub const GOLDEN_QUESTION: &str =
    "Which film has the director who was born earlier, Casablanca or Fjols til fjells?";
pub const CAPPED_QUESTION: &str = "Who directed the film that won the Golden Bear in 1958?";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn mock_gateway(name: &str) -> Gateway {
    let backend = MockBackend::load(&fixture(name).join("transcript.jsonl"), true).unwrap();
    Gateway::new(Arc::new(backend), Arc::new(HashEmbedder::default())).with_retry(RetryPolicy::none())
}

/// Builds the named fixture index with a fresh mock gateway.
pub fn fixture_index(name: &str) -> (Gateway, TripletIndex, RunConfig) {
    let gw = mock_gateway(name);
    let config = RunConfig::default();
    let corpus = load_corpus(&fixture(name).join("corpus.jsonl")).unwrap();
    let (index, _) = build_index(corpus, &gw, &config, &BuildOptions::default()).unwrap();
    (gw, index, config)
}

pub fn t(s: &str, p: &str, o: &str) -> Triplet {
    Triplet::new(s, p, o).unwrap()
}

// ---------------------------------------------------------------- generators

/// Known field text: words without `|`, never starting with `?`.
pub fn known_field() -> impl Strategy<Value = String> {
    prop::collection::vec("[A-Za-z0-9][A-Za-z0-9'.,-]{0,8}", 1..4).prop_map(|w| w.join(" "))
}

pub fn placeholder_field() -> impl Strategy<Value = String> {
    prop_oneof![Just("?".to_string()), "[a-z][A-Za-z0-9]{0,6}".prop_map(|n| format!("?{n}"))]
}

/// A triplet together with which of its slots were generated as placeholders.
pub fn any_triplet() -> impl Strategy<Value = (Triplet, [bool; 3])> {
    let field = prop_oneof![
        known_field().prop_map(|f| (f, false)),
        placeholder_field().prop_map(|f| (f, true)),
    ];
    (field.clone(), field.clone(), field).prop_map(|((s, a), (p, b), (o, c))| {
        (Triplet::new(&s, &p, &o).unwrap(), [a, b, c])
    })
}

pub fn triplet_with(placeholders: usize) -> impl Strategy<Value = Triplet> {
    (known_field(), known_field(), known_field(), placeholder_field(), placeholder_field(), placeholder_field(), 0..3usize)
        .prop_map(move |(k1, k2, k3, p1, p2, p3, rot)| {
            let known = [k1, k2, k3];
            let holes = [p1, p2, p3];
            let mut fields: Vec<String> = (0..3)
                .map(|i| if i < placeholders { holes[i].clone() } else { known[i].clone() })
                .collect();
            fields.rotate_left(rot);
            Triplet::new(&fields[0], &fields[1], &fields[2]).unwrap()
        })
}

// ---------------------------------------------------------- retrieval oracle

/// In-memory candidate table for retrieval tests.
pub struct TestIndex {
    pub rows: Vec<Vec<f32>>,
    pub chunk_ids: Vec<String>,
}

impl TestIndex {
    /// `ties` draws small-integer directions so equal scores are frequent.
    pub fn random(rng: &mut StdRng, n_props: usize, n_chunks: usize, dim: usize, ties: bool) -> Self {
        let mut rows = Vec::new();
        let mut chunk_ids = Vec::new();
        for _ in 0..n_props {
            rows.push(if ties { coarse(rng, dim) } else { unit(rng, dim) });
            chunk_ids.push(format!("c{}", rng.gen_range(0..n_chunks)));
        }
        Self { rows, chunk_ids }
    }

    pub fn into_triplet_index(self) -> TripletIndex {
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut chunks: Vec<Chunk> = Vec::new();
        for c in &self.chunk_ids {
            if !chunks.iter().any(|x| &x.chunk_id == c) {
                chunks.push(Chunk {
                    chunk_id: c.clone(),
                    doc_id: "doc".into(),
                    text: format!("passage {c}"),
                    token_span: (0, 2),
                });
            }
        }
        let props: Vec<Proposition> = self
            .chunk_ids
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let tr = t(&format!("e{i}"), "relates to", &format!("v{i}"));
                Proposition {
                    prop_id: i as u32,
                    text: verbalize(&tr).unwrap(),
                    triplet: tr,
                    chunk_id: c.clone(),
                }
            })
            .collect();
        let meta = IndexMeta {
            format_version: FORMAT_VERSION,
            dim,
            num_propositions: props.len(),
            num_chunks: chunks.len(),
            extractor_version: "test".into(),
            tokenizer_id: "whitespace-v1".into(),
            embedder_id: "random".into(),
            corpus_digest: String::new(),
            cross_chunk_duplicates: "kept".into(),
            config: RunConfig::default(),
            stats: Default::default(),
            checksums: Default::default(),
        };
        TripletIndex::from_parts(props, self.rows.concat(), chunks, meta).unwrap()
    }
}

pub fn unit(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (f64::from(*x) / n) as f32).collect();
        }
    }
}

/// Unit vectors along small-integer directions, so exact score ties are common.
pub fn coarse(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-2i32..=2) as f32).collect();
        if v.iter().any(|x| *x != 0.0) {
            return EmbeddingVector::normalized(v).unwrap().into_inner();
        }
    }
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum::<f64>() as f32
}

/// Exhaustive ranking: every row scored, fully sorted, then cut.
pub fn brute_topn(rows: &[Vec<f32>], q: &[f32], n: usize) -> Vec<(u32, f32)> {
    let mut all: Vec<(u32, f32)> = rows.iter().enumerate().map(|(i, r)| (i as u32, dot(q, r))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

/// Reference adaptive retrieval: for each candidate pool width, full-sort each
/// query's scores, union the prefixes at best score, full-sort again, then take
/// the longest prefix whose chunk set stays within `k`.
pub fn oracle_retrieve(
    rows: &[Vec<f32>],
    chunk_ids: &[String],
    queries: &[Vec<f32>],
    k: usize,
    pool_width: usize,
) -> (Vec<u32>, Vec<String>, bool) {
    let total = rows.len();
    if total == 0 || queries.is_empty() {
        return (vec![], vec![], true);
    }
    let mut widths = vec![];
    let mut w = pool_width.max(1).min(total);
    loop {
        widths.push(w);
        if w >= total {
            break;
        }
        w = (w * 2).min(total);
    }
    let mut last = (vec![], vec![], true);
    for w in widths {
        let mut best: HashMap<u32, f32> = HashMap::new();
        for q in queries {
            for (id, s) in brute_topn(rows, q, w) {
                let e = best.entry(id).or_insert(f32::NEG_INFINITY);
                if s > *e {
                    *e = s;
                }
            }
        }
        let mut pool: Vec<(u32, f32)> = best.into_iter().collect();
        pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        // largest prefix length m such that chunks(prefix[..m-1]) < k
        let mut taken = vec![];
        let mut seen: Vec<String> = vec![];
        for (id, _) in &pool {
            let distinct: HashSet<&String> = seen.iter().collect();
            if distinct.len() >= k {
                break;
            }
            taken.push(*id);
            let c = &chunk_ids[*id as usize];
            if !seen.contains(c) {
                seen.push(c.clone());
            }
        }
        let reached = seen.len() >= k;
        last = (taken, seen, !reached);
        if reached {
            break;
        }
    }
    last
}

pub fn ids(hits: &[ScoredProp]) -> Vec<u32> {
    hits.iter().map(|h| h.prop_id).collect()
}

// ----------------------------------------------------------- chunking oracle

/// Checks the chunk span contract for `n` tokens; returns a description of the
/// first violation.
pub fn check_spans(n: usize, size: usize, overlap: usize, spans: &[(usize, usize)]) -> Result<(), String> {
    if n == 0 {
        return if spans.is_empty() { Ok(()) } else { Err("empty doc produced chunks".into()) };
    }
    let mut covered = vec![false; n];
    for &(s, e) in spans {
        if e <= s || e > n || e - s > size {
            return Err(format!("bad span ({s},{e}) for n={n} size={size}"));
        }
        covered[s..e].iter_mut().for_each(|c| *c = true);
    }
    if covered.iter().any(|c| !c) {
        return Err("not every token covered".into());
    }
    if spans[0].0 != 0 {
        return Err("first chunk does not start at 0".into());
    }
    for (i, pair) in spans.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let inter = a.1.saturating_sub(b.0);
        let last_pair = i + 2 == spans.len();
        if b.0 != a.0 + (size - overlap) {
            return Err(format!("stride broken between {a:?} and {b:?}"));
        }
        if !last_pair && inter != overlap {
            return Err(format!("overlap {inter} != {overlap} between {a:?} and {b:?}"));
        }
        if last_pair && inter > overlap {
            return Err(format!("final overlap {inter} exceeds {overlap}"));
        }
    }
    // only the final chunk reaches the end; no redundant trailing chunk
    if spans.last().unwrap().1 != n {
        return Err("last chunk does not end at the final token".into());
    }
    if spans[..spans.len() - 1].iter().any(|s| s.1 == n) {
        return Err("a chunk after the one reaching the end".into());
    }
    // de-overlapped concatenation reproduces 0..n
    let mut rebuilt = Vec::new();
    let mut next = 0;
    for &(s, e) in spans {
        rebuilt.extend(next.max(s)..e);
        next = e;
    }
    if rebuilt != (0..n).collect::<Vec<_>>() {
        return Err("de-overlapped spans do not reproduce the token sequence".into());
    }
    Ok(())
}

// --------------------------------------------------------------- parse fuzz

/// Noise lines built from the tokens the parsers react to.
pub fn fuzz_text(rng: &mut StdRng) -> String {
    const PIECES: &[&str] = &[
        "Triples:", "triple:", "|", " | ", "?", "?x", "Subject:", "Predicate:", "Object:",
        "Fully Resolved Clue 1:", "Newly Searchable Clue 2", "---", "**", "- ", "1. ", "\n", "\n\n",
        " ", "é", "🦀", "\t", ":", "`", "None", "Paris", "has capital", "\r\n", "#", ">",
    ];
    let n = rng.gen_range(0..40);
    let mut s = String::new();
    for _ in 0..n {
        if rng.gen_bool(0.15) {
            let len = rng.gen_range(0..6);
            s.extend((0..len).map(|_| char::from_u32(rng.gen_range(0..0x2FFF)).unwrap_or('x')));
        } else {
            s.push_str(PIECES[rng.gen_range(0..PIECES.len())]);
        }
    }
    s
}

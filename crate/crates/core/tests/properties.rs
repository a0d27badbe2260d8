mod common;

use std::collections::HashSet;

use common::*;
use proptest::prelude::*;
use rand::Rng;

use tripletrag::index::{load_index, save_index, PropositionSearch};
use tripletrag::ingest::chunk_spans;
use tripletrag::llm::{
    format_resolution_blocks, format_triples_block, parse_decomposition, parse_extraction,
    parse_resolution, Phase, UsageEntry, UsageLedger,
};
use tripletrag::retrieve::{adaptive_retrieve, candidate_pool};
use tripletrag::state::{is_terminal, update_state, ResolutionState};
use tripletrag::triplet::normalize_field;
use tripletrag::{classify, count_placeholders, Triplet, TripletClass};

fn expected_class(n: usize) -> TripletClass {
    match n {
        0 => TripletClass::Resolved,
        1 => TripletClass::Searchable,
        _ => TripletClass::Fuzzy,
    }
}

proptest! {
    #[test]
    fn class_follows_placeholder_count((t, holes) in any_triplet()) {
        let n = holes.iter().filter(|h| **h).count();
        prop_assert_eq!(count_placeholders(&t), n);
        prop_assert_eq!(classify(&t), expected_class(n));
        prop_assert_eq!(classify(&t), classify(&t.clone()));
    }

    #[test]
    fn equality_ignores_whitespace_runs(
        (t, _) in any_triplet(),
        pad in prop::collection::vec("[ \t\n]{1,3}", 6),
    ) {
        let [s, p, o] = t.fields();
        let spaced = |f: &str, a: &str, b: &str| format!("{a}{}{b}", f.replace(' ', a));
        let u = Triplet::new(
            &spaced(s, &pad[0], &pad[1]),
            &spaced(p, &pad[2], &pad[3]),
            &spaced(o, &pad[4], &pad[5]),
        ).unwrap();
        prop_assert_eq!(&u, &t);
        prop_assert_eq!(normalize_field(&pad.concat()), "");
    }

    #[test]
    fn equality_is_an_equivalence((a, _) in any_triplet(), (b, _) in any_triplet()) {
        let a2 = Triplet::new(&format!(" {} ", a.subject()), a.predicate(), a.object()).unwrap();
        prop_assert_eq!(&a, &a2);
        prop_assert_eq!(a == b, b == a);
        prop_assert_eq!(a2 == b, a == b);
    }
}

// ------------------------------------------------------------- state machine

/// Small vocabularies so that repeats and ancestry matches are frequent.
fn small_triplet() -> impl Strategy<Value = Triplet> {
    let field = prop_oneof![
        3 => prop::sample::select(vec!["Paris", "France", "1886", "Curtiz"]),
        2 => prop::sample::select(vec!["?", "?x", "?y"]),
    ];
    let pred = prop_oneof![
        3 => prop::sample::select(vec!["has capital", "born in"]),
        1 => Just("?"),
    ];
    (field.clone(), pred, field).prop_map(|(s, p, o)| Triplet::new(s, p, o).unwrap())
}

fn round_input() -> impl Strategy<Value = (Vec<Triplet>, Vec<Triplet>)> {
    (
        prop::collection::vec(small_triplet(), 0..4),
        prop::collection::vec(small_triplet(), 0..4),
    )
}

fn assert_well_formed(s: &ResolutionState) -> Result<(), TestCaseError> {
    for (set, class) in [
        (s.resolved(), TripletClass::Resolved),
        (s.searchable(), TripletClass::Searchable),
        (s.fuzzy(), TripletClass::Fuzzy),
    ] {
        for t in set {
            prop_assert_eq!(t.class(), class, "{} in the wrong set", t);
        }
    }
    for t in s.resolved() {
        prop_assert!(!s.searchable().contains(t) && !s.fuzzy().contains(t));
    }
    for t in s.searchable() {
        prop_assert!(!s.fuzzy().contains(t));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn update_sequences_keep_invariants(
        initial in prop::collection::vec(small_triplet(), 0..6),
        rounds in prop::collection::vec(round_input(), 0..6),
        max_rounds in 0u32..5,
    ) {
        let mut state = ResolutionState::from_triplets(initial);
        assert_well_formed(&state)?;
        let mut calls = 0u32;
        for (new_resolved, new_searchable) in rounds {
            if is_terminal(&state, max_rounds) {
                break;
            }
            let expect_searchable: Vec<Triplet> = new_resolved
                .iter()
                .chain(&new_searchable)
                .filter(|t| t.class() == TripletClass::Searchable)
                .fold(Vec::new(), |mut acc, t| {
                    if !acc.contains(t) {
                        acc.push(t.clone());
                    }
                    acc
                });
            let next = update_state(&state, new_resolved, new_searchable);
            calls += 1;
            prop_assert!(state.resolved().iter().all(|t| next.resolved().contains(t)));
            prop_assert_eq!(next.round(), state.round() + 1);
            prop_assert_eq!(next.searchable().iter().cloned().collect::<Vec<_>>(), expect_searchable);
            prop_assert!(next.fuzzy().len() <= state.fuzzy().len() + 8);
            let rounds: Vec<u32> = next.trace().iter().map(|r| r.round_index).collect();
            prop_assert!(rounds.windows(2).all(|w| w[0] < w[1]));
            assert_well_formed(&next)?;
            state = next;
        }
        prop_assert!(calls <= max_rounds);
    }

    #[test]
    fn repeated_triplets_are_no_ops(initial in prop::collection::vec(small_triplet(), 0..6)) {
        let mut twice = initial.clone();
        twice.extend(initial.iter().cloned());
        prop_assert_eq!(
            ResolutionState::from_triplets(initial).snapshot(),
            ResolutionState::from_triplets(twice).snapshot()
        );
    }
}

// ---------------------------------------------------------------- retrieval

fn retrieval_case() -> impl Strategy<Value = (u64, usize, usize, usize, usize, usize, bool)> {
    (any::<u64>(), 1usize..=50, 1usize..=10, 1usize..=5, 1usize..=4, 1usize..=12, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn adaptive_retrieve_matches_oracle(
        (seed, n_props, n_chunks, k, n_queries, width, ties) in retrieval_case(),
    ) {
        let mut rng = seeded(seed);
        let dim = 6;
        let test = TestIndex::random(&mut rng, n_props, n_chunks, dim, ties);
        let queries: Vec<Vec<f32>> = (0..n_queries)
            .map(|_| if ties { coarse(&mut rng, dim) } else { unit(&mut rng, dim) })
            .collect();
        let (want_ids, want_chunks, want_exhausted) =
            oracle_retrieve(&test.rows, &test.chunk_ids, &queries, k, width);
        let index = test.into_triplet_index();
        let slices: Vec<&[f32]> = queries.iter().map(Vec::as_slice).collect();
        let got = adaptive_retrieve(&index, &slices, k, width, &HashSet::new()).unwrap();
        prop_assert_eq!(ids(&got.propositions), want_ids);
        prop_assert_eq!(&got.chunks, &want_chunks);
        prop_assert_eq!(got.exhausted, want_exhausted);

        // chunk bound and consistency between the two lists
        prop_assert!(got.chunks.len() <= k);
        let distinct: HashSet<&String> = got.chunks.iter().collect();
        prop_assert_eq!(distinct.len(), got.chunks.len());
        let touched: HashSet<&str> =
            got.propositions.iter().map(|p| index.chunk_of(p.prop_id)).collect();
        prop_assert_eq!(touched, got.chunks.iter().map(String::as_str).collect::<HashSet<_>>());

        let again = adaptive_retrieve(&index, &slices, k, width, &HashSet::new()).unwrap();
        prop_assert_eq!(again, got);
    }

    #[test]
    fn extra_queries_only_grow_the_pool(
        (seed, n_props, n_chunks, _k, n_queries, width, ties) in retrieval_case(),
    ) {
        let mut rng = seeded(seed);
        let dim = 5;
        let index = TestIndex::random(&mut rng, n_props, n_chunks, dim, ties).into_triplet_index();
        let queries: Vec<Vec<f32>> = (0..=n_queries).map(|_| coarse(&mut rng, dim)).collect();
        let all: Vec<&[f32]> = queries.iter().map(Vec::as_slice).collect();
        let fewer = candidate_pool(&index, &all[..n_queries], width).unwrap();
        let more = candidate_pool(&index, &all, width).unwrap();
        for p in &fewer {
            let q = more.iter().find(|m| m.prop_id == p.prop_id);
            prop_assert!(q.is_some_and(|q| q.score >= p.score), "prop {} dropped", p.prop_id);
        }
    }

    #[test]
    fn excluded_chunks_never_appear(
        (seed, n_props, n_chunks, k, n_queries, width, ties) in retrieval_case(),
    ) {
        let mut rng = seeded(seed);
        let dim = 4;
        let index = TestIndex::random(&mut rng, n_props, n_chunks, dim, ties).into_triplet_index();
        let queries: Vec<Vec<f32>> = (0..n_queries).map(|_| unit(&mut rng, dim)).collect();
        let slices: Vec<&[f32]> = queries.iter().map(Vec::as_slice).collect();
        let excluded: HashSet<String> = index
            .chunks()
            .iter()
            .filter(|_| rng.gen_bool(0.4))
            .map(|c| c.chunk_id.clone())
            .collect();
        let got = adaptive_retrieve(&index, &slices, k, width, &excluded).unwrap();
        prop_assert!(got.chunks.iter().all(|c| !excluded.contains(c)));
        let available = index.chunks().len() - excluded.len();
        prop_assert_eq!(got.exhausted, available < k);
        prop_assert_eq!(got.chunks.len(), available.min(k));
    }

    #[test]
    fn search_topn_matches_exhaustive_sort(
        seed in any::<u64>(),
        n_props in 0usize..60,
        dim in 1usize..9,
        n in 1usize..70,
        ties in any::<bool>(),
    ) {
        let mut rng = seeded(seed);
        let test = TestIndex::random(&mut rng, n_props, 3, dim, ties);
        let q = if ties { coarse(&mut rng, dim) } else { unit(&mut rng, dim) };
        let want = brute_topn(&test.rows, &q, n);
        let rows = test.rows.clone();
        let index = if n_props == 0 { None } else { Some(test.into_triplet_index()) };
        let got: Vec<(u32, f32)> = match &index {
            Some(index) => index.search_topn(&q, n).unwrap().iter().map(|h| (h.prop_id, h.score)).collect(),
            None => vec![],
        };
        prop_assert_eq!(got.len(), n.min(rows.len()));
        prop_assert_eq!(got, want);
    }
}

// ----------------------------------------------------------------- chunking

proptest! {
    #[test]
    fn chunk_spans_cover_with_exact_overlap(
        n in 0usize..5000,
        size in 1usize..700,
        overlap_frac in 0.0f64..1.0,
    ) {
        let overlap = ((size as f64) * overlap_frac) as usize;
        prop_assume!(overlap < size);
        let spans = chunk_spans(n, size, overlap).unwrap();
        if let Err(msg) = check_spans(n, size, overlap, &spans) {
            return Err(TestCaseError::fail(msg));
        }
    }

    #[test]
    fn overlap_not_below_size_is_rejected(size in 0usize..50, extra in 0usize..5) {
        prop_assert!(chunk_spans(10, size, size + extra).is_err());
    }
}

// ------------------------------------------------------------------ parsers

/// Fields the block formats carry verbatim: no pipes, no markdown emphasis,
/// and no leading list markers.
fn clean_field() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => prop::collection::vec("[A-Za-z][a-z0-9'-]{0,7}", 1..4).prop_map(|w| w.join(" ")),
        1 => "\\?[a-zA-Z]{0,6}",
    ]
}

fn clean_triplet() -> impl Strategy<Value = Triplet> {
    (clean_field(), clean_field(), clean_field())
        .prop_filter("echoed format line", |(_, p, o)| {
            !(p.eq_ignore_ascii_case("predicate") && o.eq_ignore_ascii_case("object"))
        })
        .prop_map(|(s, p, o)| Triplet::new(&s, &p, &o).unwrap())
}

fn distinct(ts: Vec<Triplet>) -> Vec<Triplet> {
    let mut out: Vec<Triplet> = Vec::new();
    for t in ts {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

proptest! {
    #[test]
    fn decomposition_round_trips(ts in prop::collection::vec(clean_triplet(), 1..8)) {
        let ts = distinct(ts);
        let text = format!("Reasoning first.\n{}", format_triples_block(&ts));
        prop_assert_eq!(parse_decomposition(&text).unwrap(), ts.clone());
        let (kept, dropped) = parse_extraction(&text);
        let closed: Vec<Triplet> = ts.iter().filter(|t| t.placeholder_count() == 0).cloned().collect();
        prop_assert_eq!(dropped, ts.len() - closed.len());
        prop_assert_eq!(kept, closed);
    }

    #[test]
    fn resolution_round_trips(
        resolved in prop::collection::vec(clean_triplet(), 0..5),
        searchable in prop::collection::vec(clean_triplet(), 0..5),
    ) {
        let (resolved, searchable) = (distinct(resolved), distinct(searchable));
        let text = format!("Some analysis.\n\n{}", format_resolution_blocks(&resolved, &searchable));
        let out = parse_resolution(&text);
        prop_assert_eq!(out.resolved, resolved);
        prop_assert_eq!(out.searchable, searchable);
        prop_assert_eq!(out.skipped, 0);
    }

    #[test]
    fn parsers_never_panic_on_noise(seed in any::<u64>(), raw in "\\PC{0,200}") {
        let mut rng = seeded(seed);
        for text in [fuzz_text(&mut rng), raw] {
            let _ = parse_decomposition(&text);
            let _ = parse_extraction(&text);
            let _ = parse_resolution(&text);
        }
    }
}

// -------------------------------------------------------------------- usage

fn usage_entry() -> impl Strategy<Value = UsageEntry> {
    (
        prop::sample::select(vec![Phase::Extract, Phase::Decompose, Phase::Resolve, Phase::Answer]),
        0u64..100_000,
        0u64..100_000,
        any::<bool>(),
    )
        .prop_map(|(phase, input_tokens, output_tokens, estimated)| UsageEntry {
            phase,
            input_tokens,
            output_tokens,
            estimated,
        })
}

proptest! {
    #[test]
    fn ledger_totals_are_linear(entries in prop::collection::vec(usage_entry(), 0..30)) {
        let ledger = UsageLedger::new();
        for e in &entries {
            ledger.record(*e);
        }
        let input: u64 = entries.iter().map(|e| e.input_tokens).sum();
        let output: u64 = entries.iter().map(|e| e.output_tokens).sum();
        let total = ledger.total();
        prop_assert_eq!((total.input_tokens, total.output_tokens), (input, output));
        prop_assert_eq!(total.estimated, entries.iter().any(|e| e.estimated));
        prop_assert_eq!(ledger.weighted_cost(), input + 4 * output);
        let by_phase: u64 = ledger.by_phase().values().map(|s| s.weighted_cost()).sum();
        prop_assert_eq!(by_phase, ledger.weighted_cost());
    }
}

// ------------------------------------------------------------------ storage

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn saved_index_answers_like_the_original(
        seed in any::<u64>(),
        n_props in 1usize..40,
        dim in 1usize..12,
    ) {
        let mut rng = seeded(seed);
        let index = TestIndex::random(&mut rng, n_props, 5, dim, false).into_triplet_index();
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, dir.path()).unwrap();
        let loaded = load_index(dir.path()).unwrap();
        prop_assert_eq!(loaded.propositions(), index.propositions());
        prop_assert_eq!(loaded.chunks(), index.chunks());
        for _ in 0..5 {
            let q = unit(&mut rng, dim);
            let n = rng.gen_range(1..=n_props);
            prop_assert_eq!(loaded.search_topn(&q, n).unwrap(), index.search_topn(&q, n).unwrap());
        }
    }
}

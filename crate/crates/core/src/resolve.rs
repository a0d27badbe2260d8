//! Online query loop: decompose the question into triplets, resolve them over
//! a bounded number of retrieve-then-resolve rounds, then answer.

use std::collections::HashSet;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::index::TripletIndex;
use crate::llm::{
    parse_decomposition, parse_resolution, render_clues, Bindings, Gateway, Phase, TemplateId,
    UsageEntry, UsageLedger, UsageSummary,
};
use crate::retrieve::{query_proposition, retrieve_texts};
use crate::state::{
    is_terminal, ResolutionState, RetrievalMode, RoundRecord, RoundRetrieval, RoundUpdate,
    StateSnapshot,
};
use crate::triplet::Triplet;

/// Predicate of the stand-in triplet used when decomposition yields nothing.
pub const FALLBACK_PREDICATE: &str = "answers";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerBranch {
    /// Nothing left unresolved; clues are the resolved triplets.
    Resolved,
    /// Round budget spent; clues are resolved plus leftover searchable triplets.
    MaxRounds,
}

/// One line of the query trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Decompose {
        query: String,
        triplets: Vec<Triplet>,
        fallback: bool,
        state: StateSnapshot,
        usage: UsageSummary,
    },
    Round(RoundRecord),
    Answer {
        branch: AnswerBranch,
        clues: Vec<Triplet>,
        /// Fuzzy triplets left out of the answer prompt.
        excluded_fuzzy: Vec<Triplet>,
        prompt: String,
        answer: String,
        usage: UsageSummary,
    },
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub state: ResolutionState,
    pub triplets: Vec<Triplet>,
    pub fallback: bool,
    pub usage: UsageSummary,
}

#[derive(Debug, Clone)]
pub struct AnswerOutcome {
    pub answer: String,
    pub branch: AnswerBranch,
    pub clues: Vec<Triplet>,
    pub excluded_fuzzy: Vec<Triplet>,
    pub prompt: String,
    pub usage: UsageSummary,
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub answer: String,
    pub fully_resolved: bool,
    pub rounds_used: u32,
    pub final_state: ResolutionState,
    pub usage: UsageLedger,
    pub trace: Vec<TraceEvent>,
    pub latency: Duration,
}

impl QueryResult {
    pub fn branch(&self) -> Option<AnswerBranch> {
        self.trace.iter().rev().find_map(|e| match e {
            TraceEvent::Answer { branch, .. } => Some(*branch),
            _ => None,
        })
    }
}

/// A failed query, with everything recorded up to the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct QueryFailure {
    #[source]
    pub error: Error,
    pub state: Option<Box<ResolutionState>>,
    pub trace: Vec<TraceEvent>,
    pub usage: UsageLedger,
}

/// Strips an echoed `Answer:` label and surrounding whitespace.
pub fn clean_answer(text: &str) -> String {
    let t = text.trim();
    let stripped = match t.get(..7) {
        Some(head) if head.eq_ignore_ascii_case("answer:") => t[7..].trim_start(),
        _ => t,
    };
    stripped.trim().to_string()
}

fn truncate_chars(text: &str, budget: Option<usize>) -> &str {
    match budget.and_then(|b| text.char_indices().nth(b)) {
        Some((cut, _)) => &text[..cut],
        None => text,
    }
}

fn bind(pairs: Vec<(&str, String)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn entry(phase: Phase, usage: &UsageSummary) -> UsageEntry {
    UsageEntry {
        phase,
        input_tokens: usage.input_tokens,
        output_tokens: usage.output_tokens,
        estimated: usage.estimated,
    }
}

/// Answers questions against one index through one gateway.
#[derive(Clone, Copy)]
pub struct QueryEngine<'a> {
    gateway: &'a Gateway,
    index: &'a TripletIndex,
    config: &'a RunConfig,
}

impl<'a> QueryEngine<'a> {
    pub fn new(gateway: &'a Gateway, index: &'a TripletIndex, config: &'a RunConfig) -> Self {
        Self {
            gateway,
            index,
            config,
        }
    }

    pub fn config(&self) -> &RunConfig {
        self.config
    }

    /// Round-0 state. Unparseable decompositions fall back to a single
    /// searchable triplet `(query, answers, ?)`.
    pub fn decompose(&self, query: &str) -> Result<Decomposition> {
        if query.trim().is_empty() {
            return Err(Error::InvalidArgument("query is empty".into()));
        }
        let prompt = self
            .gateway
            .render(TemplateId::Decompose, &bind(vec![("query", query.to_string())]))?;
        let reply = self.gateway.complete(Phase::Decompose, &prompt)?;
        let (triplets, fallback) = match parse_decomposition(&reply.text) {
            Ok(ts) => (ts, false),
            Err(Error::DecompositionFailed) => {
                tracing::warn!("decomposition unparseable; searching with the whole question");
                (vec![Triplet::new(query, FALLBACK_PREDICATE, "?")?], true)
            }
            Err(e) => return Err(e),
        };
        Ok(Decomposition {
            state: ResolutionState::from_triplets(triplets.iter().cloned()),
            triplets,
            fallback,
            usage: reply.usage,
        })
    }

    /// One retrieve-then-resolve round applied to `state`.
    pub fn resolve_round(
        &self,
        query: &str,
        state: &mut ResolutionState,
        excluded: &HashSet<String>,
    ) -> Result<RoundRecord> {
        let (mode, queries) = if state.searchable().is_empty() {
            (RetrievalMode::QueryFallback, vec![query.to_string()])
        } else {
            let qs = state
                .searchable()
                .iter()
                .map(query_proposition)
                .collect::<Result<Vec<_>>>()?;
            (RetrievalMode::Searchable, qs)
        };
        let retrieved = retrieve_texts(
            self.gateway,
            self.index,
            &queries,
            self.config.k,
            self.config.pool_width(),
            excluded,
        )?;

        let propositions: Vec<&str> = retrieved
            .propositions
            .iter()
            .filter_map(|p| self.index.proposition(p.prop_id).map(|p| p.text.as_str()))
            .collect();
        let passages: Vec<String> = retrieved
            .chunks
            .iter()
            .filter_map(|id| self.index.chunk(id))
            .enumerate()
            .map(|(i, c)| format!("[{}] {}", i + 1, truncate_chars(&c.text, self.config.chunk_char_budget)))
            .collect();
        let block = |lines: Vec<String>| {
            if lines.is_empty() {
                "None".to_string()
            } else {
                format!("\n{}", lines.join("\n"))
            }
        };
        let bindings = bind(vec![
            ("query", query.to_string()),
            ("searchable_clues", render_clues(state.searchable())),
            ("fuzzy_clues", render_clues(state.fuzzy())),
            ("context_passages", block(passages)),
            ("context_propositions", block(propositions.iter().map(|s| s.to_string()).collect())),
            ("resolved_clues", render_clues(state.resolved())),
        ]);
        let prompt = self.gateway.render(TemplateId::Resolve, &bindings)?;
        let reply = self.gateway.complete(Phase::Resolve, &prompt)?;
        let parsed = parse_resolution(&reply.text);

        let update = RoundUpdate {
            new_resolved: parsed.resolved,
            new_searchable: parsed.searchable,
            retrieval: RoundRetrieval {
                mode,
                queries,
                propositions: retrieved.propositions,
                chunk_ids: retrieved.chunks,
                exhausted: retrieved.exhausted,
            },
            usage: reply.usage,
        };
        Ok(state.apply_round(update, self.config.propagate_bindings).clone())
    }

    /// Final answer from a terminal state.
    pub fn answer(&self, query: &str, state: &ResolutionState) -> Result<AnswerOutcome> {
        let outcome = self.answer_unchecked(query, state)?;
        if outcome.answer.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        Ok(outcome)
    }

    fn answer_unchecked(&self, query: &str, state: &ResolutionState) -> Result<AnswerOutcome> {
        let (branch, clues): (AnswerBranch, Vec<Triplet>) = if state.is_fully_resolved() {
            (AnswerBranch::Resolved, state.resolved().iter().cloned().collect())
        } else {
            let clues = state.resolved().iter().chain(state.searchable()).cloned().collect();
            (AnswerBranch::MaxRounds, clues)
        };
        let excluded_fuzzy: Vec<Triplet> = state.fuzzy().iter().cloned().collect();
        if !excluded_fuzzy.is_empty() {
            tracing::info!(count = excluded_fuzzy.len(), "fuzzy triplets left out of the answer prompt");
        }
        let prompt = self.gateway.render(
            TemplateId::Answer,
            &bind(vec![("query", query.to_string()), ("clues", render_clues(&clues))]),
        )?;
        let reply = self.gateway.complete(Phase::Answer, &prompt)?;
        Ok(AnswerOutcome {
            answer: clean_answer(&reply.text),
            branch,
            clues,
            excluded_fuzzy,
            prompt: prompt.text,
            usage: reply.usage,
        })
    }

    /// Decompose, resolve for at most `max_rounds` rounds, answer.
    pub fn run_query(&self, query: &str) -> std::result::Result<QueryResult, QueryFailure> {
        let started = Instant::now();
        let ledger = UsageLedger::new();
        let mut trace = Vec::new();
        let fail = |error, state: Option<ResolutionState>, trace: Vec<TraceEvent>, ledger: &UsageLedger| QueryFailure {
            error,
            state: state.map(Box::new),
            trace,
            usage: ledger.clone(),
        };

        let decomposition = match self.decompose(query) {
            Ok(d) => d,
            Err(e) => return Err(fail(e, None, trace, &ledger)),
        };
        ledger.record(entry(Phase::Decompose, &decomposition.usage));
        trace.push(TraceEvent::Decompose {
            query: query.to_string(),
            triplets: decomposition.triplets.clone(),
            fallback: decomposition.fallback,
            state: decomposition.state.snapshot(),
            usage: decomposition.usage,
        });

        let mut state = decomposition.state;
        let mut excluded: HashSet<String> = HashSet::new();
        while !is_terminal(&state, self.config.max_rounds) {
            match self.resolve_round(query, &mut state, &excluded) {
                Ok(record) => {
                    ledger.record(entry(Phase::Resolve, &record.usage));
                    if self.config.dedup_rounds {
                        excluded.extend(record.retrieval.chunk_ids.iter().cloned());
                    }
                    trace.push(TraceEvent::Round(record));
                }
                Err(e) => return Err(fail(e, Some(state), trace, &ledger)),
            }
        }

        let outcome = match self.answer_unchecked(query, &state) {
            Ok(o) => o,
            Err(e) => return Err(fail(e, Some(state), trace, &ledger)),
        };
        ledger.record(entry(Phase::Answer, &outcome.usage));
        if outcome.answer.is_empty() {
            return Err(fail(Error::EmptyAnswer, Some(state), trace, &ledger));
        }
        trace.push(TraceEvent::Answer {
            branch: outcome.branch,
            clues: outcome.clues,
            excluded_fuzzy: outcome.excluded_fuzzy,
            prompt: outcome.prompt,
            answer: outcome.answer.clone(),
            usage: outcome.usage,
        });
        Ok(QueryResult {
            answer: outcome.answer,
            fully_resolved: state.is_fully_resolved(),
            rounds_used: state.round(),
            final_state: state,
            usage: ledger,
            trace,
            latency: started.elapsed(),
        })
    }
}

/// One JSON object per line.
pub fn write_trace<W: Write>(events: &[TraceEvent], mut out: W) -> Result<()> {
    for event in events {
        let line = serde_json::to_string(event).map_err(|e| Error::json("trace event", e))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<trace>", e))?;
    }
    out.flush().map_err(|e| Error::io("<trace>", e))
}

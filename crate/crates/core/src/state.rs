//! The per-query resolution state and its update rule.
//!
//! Each round replaces the searchable set with whatever the resolver newly
//! made searchable, grows the resolved set, and drops fuzzy triplets that a new
//! triplet descends from. A fuzzy triplet `f` is an ancestor of a new triplet
//! `n` when, slot by slot:
//!
//! - a known field of `f` appears verbatim in `n`,
//! - an anonymous `?` in `f` accepts anything,
//! - a named `?x` in `f` accepts `?x` itself, or a concrete value that is
//!   the binding of `x` (or of no other name, when `x` is still unbound).
//!
//! Bindings are learned when a searchable triplet with a named placeholder is
//! resolved, e.g. `MovieA | is directed by | ?directorA` resolved to
//! `MovieA | is directed by | Michael Curtiz` binds `directorA`.

use std::collections::BTreeMap;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::llm::UsageSummary;
use crate::triplet::{Field, Slot, Triplet, TripletClass};

pub type TripletSet = IndexSet<Triplet>;

/// A triplet the resolver labelled with the wrong class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reroute {
    pub triplet: Triplet,
    pub labelled: TripletClass,
    pub actual: TripletClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredProp {
    pub prop_id: u32,
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Query propositions built from the searchable triplets.
    #[default]
    Searchable,
    /// Only fuzzy triplets remained, so the original question was used.
    QueryFallback,
}

/// What the retrieval half of a round fetched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RoundRetrieval {
    pub mode: RetrievalMode,
    pub queries: Vec<String>,
    pub propositions: Vec<ScoredProp>,
    pub chunk_ids: Vec<String>,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StateSnapshot {
    pub resolved: Vec<Triplet>,
    pub searchable: Vec<Triplet>,
    pub fuzzy: Vec<Triplet>,
}

/// One retrieve-then-resolve iteration, as logged in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u32,
    pub retrieval: RoundRetrieval,
    pub newly_resolved: Vec<Triplet>,
    pub newly_searchable: Vec<Triplet>,
    pub rerouted: Vec<Reroute>,
    pub unsolicited: Vec<Triplet>,
    pub state: StateSnapshot,
    pub usage: UsageSummary,
}

/// Input to one state transition.
#[derive(Debug, Clone, Default)]
pub struct RoundUpdate {
    pub new_resolved: Vec<Triplet>,
    pub new_searchable: Vec<Triplet>,
    pub retrieval: RoundRetrieval,
    pub usage: UsageSummary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResolutionState {
    resolved: TripletSet,
    searchable: TripletSet,
    fuzzy: TripletSet,
    round: u32,
    bindings: BTreeMap<String, String>,
    trace: Vec<RoundRecord>,
}

impl ResolutionState {
    /// Builds the round-0 partition from decomposed triplets.
    pub fn from_triplets<I: IntoIterator<Item = Triplet>>(triplets: I) -> Self {
        let mut state = Self::default();
        for t in triplets {
            state.insert_classified(t);
        }
        state
    }

    pub fn resolved(&self) -> &TripletSet {
        &self.resolved
    }

    pub fn searchable(&self) -> &TripletSet {
        &self.searchable
    }

    pub fn fuzzy(&self) -> &TripletSet {
        &self.fuzzy
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn bindings(&self) -> &BTreeMap<String, String> {
        &self.bindings
    }

    pub fn trace(&self) -> &[RoundRecord] {
        &self.trace
    }

    /// Number of triplets still carrying placeholders.
    pub fn unresolved_count(&self) -> usize {
        self.searchable.len() + self.fuzzy.len()
    }

    pub fn is_fully_resolved(&self) -> bool {
        self.unresolved_count() == 0
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            resolved: self.resolved.iter().cloned().collect(),
            searchable: self.searchable.iter().cloned().collect(),
            fuzzy: self.fuzzy.iter().cloned().collect(),
        }
    }

    /// Inserts `t` into the set matching its placeholder count. No-op if already present.
    fn insert_classified(&mut self, t: Triplet) -> bool {
        if self.contains(&t) {
            return false;
        }
        match t.class() {
            TripletClass::Resolved => self.resolved.insert(t),
            TripletClass::Searchable => self.searchable.insert(t),
            TripletClass::Fuzzy => self.fuzzy.insert(t),
        }
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.resolved.contains(t) || self.searchable.contains(t) || self.fuzzy.contains(t)
    }

    /// Applies one round of resolver output. Labels from the resolver are
    /// re-checked by counting placeholders; mislabelled triplets are moved to
    /// their real class and reported in the returned record.
    pub fn apply_round(&mut self, update: RoundUpdate, propagate_bindings: bool) -> &RoundRecord {
        let mut resolved_in: Vec<Triplet> = Vec::new();
        let mut searchable_in: Vec<Triplet> = Vec::new();
        let mut fuzzy_in: Vec<Triplet> = Vec::new();
        let mut rerouted = Vec::new();

        let labelled = update
            .new_resolved
            .into_iter()
            .map(|t| (t, TripletClass::Resolved))
            .chain(
                update
                    .new_searchable
                    .into_iter()
                    .map(|t| (t, TripletClass::Searchable)),
            );
        for (t, label) in labelled {
            let actual = t.class();
            if actual != label {
                tracing::warn!(triplet = %t, ?label, ?actual, "resolver mislabelled triplet");
                rerouted.push(Reroute {
                    triplet: t.clone(),
                    labelled: label,
                    actual,
                });
            }
            let bucket = match actual {
                TripletClass::Resolved => &mut resolved_in,
                TripletClass::Searchable => &mut searchable_in,
                TripletClass::Fuzzy => &mut fuzzy_in,
            };
            if !bucket.contains(&t) {
                bucket.push(t);
            }
        }

        let unsolicited: Vec<Triplet> = resolved_in
            .iter()
            .chain(&searchable_in)
            .filter(|n| {
                !self
                    .searchable
                    .iter()
                    .chain(&self.fuzzy)
                    .any(|c| c == *n || derives_from(c, n))
            })
            .cloned()
            .collect();

        self.learn_bindings(&resolved_in);

        let progressed: Vec<&Triplet> = resolved_in.iter().chain(&searchable_in).collect();
        let mut remaining_fuzzy = TripletSet::new();
        let old_fuzzy = std::mem::take(&mut self.fuzzy);
        for f in old_fuzzy {
            match progressed
                .iter()
                .find(|n| is_fuzzy_ancestor(&f, n, &self.bindings))
            {
                Some(n) => self.bind_from_descendant(&f, n),
                None => {
                    remaining_fuzzy.insert(f);
                }
            }
        }
        self.fuzzy = remaining_fuzzy;

        let mut newly_resolved = Vec::new();
        for t in resolved_in {
            if self.resolved.insert(t.clone()) {
                newly_resolved.push(t);
            }
        }

        self.searchable = searchable_in.iter().cloned().collect();
        for t in fuzzy_in {
            if !self.contains(&t) {
                self.fuzzy.insert(t);
            }
        }

        if propagate_bindings {
            self.propagate_bindings();
        }

        self.round += 1;
        let record = RoundRecord {
            round_index: self.round,
            retrieval: update.retrieval,
            newly_resolved,
            newly_searchable: searchable_in,
            rerouted,
            unsolicited,
            state: self.snapshot(),
            usage: update.usage,
        };
        self.trace.push(record);
        self.trace.last().expect("record just pushed")
    }

    /// Learns `name -> value` from searchable triplets with a named placeholder
    /// that a new resolved triplet completes.
    fn learn_bindings(&mut self, resolved_in: &[Triplet]) {
        for s in &self.searchable {
            let Some((slot, name)) = Slot::ALL.iter().find_map(|&slot| match s.field(slot) {
                Field::Named(name) => Some((slot, name)),
                _ => None,
            }) else {
                continue;
            };
            if self.bindings.contains_key(name) {
                continue;
            }
            if let Some(r) = resolved_in.iter().find(|r| derives_from(s, r)) {
                self.bindings
                    .insert(name.to_string(), r.get(slot).to_string());
            }
        }
    }

    fn bind_from_descendant(&mut self, fuzzy: &Triplet, descendant: &Triplet) {
        for slot in Slot::ALL {
            if let (Field::Named(name), Field::Known(value)) =
                (fuzzy.field(slot), descendant.field(slot))
            {
                self.bindings
                    .entry(name.to_string())
                    .or_insert_with(|| value.to_string());
            }
        }
    }

    /// Substitutes bound named placeholders into fuzzy triplets without an LLM round.
    fn propagate_bindings(&mut self) {
        let old_fuzzy = std::mem::take(&mut self.fuzzy);
        for f in old_fuzzy {
            let mut current = f.clone();
            for slot in Slot::ALL {
                if let Field::Named(name) = current.field(slot) {
                    if let Some(value) = self.bindings.get(name) {
                        if let Ok(next) = current.with(slot, value) {
                            current = next;
                        }
                    }
                }
            }
            if current == f {
                self.fuzzy.insert(f);
            } else {
                self.insert_classified(current);
            }
        }
    }
}

/// `n` fills some placeholders of `clue` and agrees with every known field.
fn derives_from(clue: &Triplet, n: &Triplet) -> bool {
    n.placeholder_count() < clue.placeholder_count()
        && Slot::ALL.iter().all(|&slot| match clue.field(slot) {
            Field::Known(v) => n.get(slot) == v,
            Field::Anonymous | Field::Named(_) => true,
        })
}

fn is_fuzzy_ancestor(f: &Triplet, n: &Triplet, bindings: &BTreeMap<String, String>) -> bool {
    if n.placeholder_count() >= f.placeholder_count() {
        return false;
    }
    Slot::ALL.iter().all(|&slot| match (f.field(slot), n.field(slot)) {
        (Field::Known(a), _) => n.get(slot) == a,
        (Field::Anonymous, _) => true,
        (Field::Named(x), Field::Named(y)) => x == y,
        (Field::Named(_), Field::Anonymous) => false,
        (Field::Named(x), Field::Known(v)) => match bindings.get(x) {
            Some(bound) => bound == v,
            None => !bindings.values().any(|b| b == v),
        },
    })
}

/// Functional form of [`ResolutionState::apply_round`] without retrieval details.
pub fn update_state(
    state: &ResolutionState,
    new_resolved: Vec<Triplet>,
    new_searchable: Vec<Triplet>,
) -> ResolutionState {
    let mut next = state.clone();
    next.apply_round(
        RoundUpdate {
            new_resolved,
            new_searchable,
            ..RoundUpdate::default()
        },
        false,
    );
    next
}

/// True once nothing is left to resolve or the round budget is spent.
pub fn is_terminal(state: &ResolutionState, max_rounds: u32) -> bool {
    state.unresolved_count() == 0 || state.round() >= max_rounds
}

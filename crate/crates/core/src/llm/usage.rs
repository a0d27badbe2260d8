use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Phase;

/// Output tokens are priced this many times higher than input tokens.
pub const OUTPUT_TOKEN_WEIGHT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageSummary {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// At least one contributing count was estimated rather than reported.
    #[serde(default)]
    pub estimated: bool,
}

impl UsageSummary {
    pub fn weighted_cost(&self) -> u64 {
        self.input_tokens + OUTPUT_TOKEN_WEIGHT * self.output_tokens
    }

    pub fn add(&mut self, other: &UsageSummary) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.estimated |= other.estimated;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub phase: Phase,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated: bool,
}

impl UsageEntry {
    pub fn summary(&self) -> UsageSummary {
        UsageSummary {
            input_tokens: self.input_tokens,
            output_tokens: self.output_tokens,
            estimated: self.estimated,
        }
    }
}

/// Append-only record of token usage. Appends may come from several threads.
#[derive(Debug, Default)]
pub struct UsageLedger {
    entries: Mutex<Vec<UsageEntry>>,
}

impl Clone for UsageLedger {
    fn clone(&self) -> Self {
        Self::from_entries(self.entries())
    }
}

impl Serialize for UsageLedger {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View {
            entries: Vec<UsageEntry>,
            by_phase: BTreeMap<Phase, UsageSummary>,
            total: UsageSummary,
            weighted_cost: u64,
        }
        View {
            entries: self.entries(),
            by_phase: self.by_phase(),
            total: self.total(),
            weighted_cost: self.weighted_cost(),
        }
        .serialize(serializer)
    }
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<UsageEntry>) -> Self {
        Self {
            entries: Mutex::new(entries),
        }
    }

    pub fn record(&self, entry: UsageEntry) {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
    }

    pub fn extend(&self, other: &UsageLedger) {
        let incoming = other.entries();
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .extend(incoming);
    }

    pub fn entries(&self) -> Vec<UsageEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> UsageSummary {
        let mut total = UsageSummary::default();
        for e in self.entries() {
            total.add(&e.summary());
        }
        total
    }

    pub fn by_phase(&self) -> BTreeMap<Phase, UsageSummary> {
        let mut out: BTreeMap<Phase, UsageSummary> = BTreeMap::new();
        for e in self.entries() {
            out.entry(e.phase).or_default().add(&e.summary());
        }
        out
    }

    pub fn weighted_cost(&self) -> u64 {
        weighted_cost(self).total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_phase: BTreeMap<Phase, u64>,
    pub total: u64,
}

/// `input + 4 * output`, per phase and overall.
pub fn weighted_cost(ledger: &UsageLedger) -> CostBreakdown {
    let per_phase: BTreeMap<Phase, u64> = ledger
        .by_phase()
        .into_iter()
        .map(|(phase, s)| (phase, s.weighted_cost()))
        .collect();
    let total = ledger
        .entries()
        .iter()
        .map(|e| e.input_tokens + OUTPUT_TOKEN_WEIGHT * e.output_tokens)
        .sum();
    CostBreakdown { per_phase, total }
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, TemplateError};
use crate::triplet::Triplet;

/// Version stamp of the extraction prompt, recorded in index metadata.
pub const EXTRACTOR_VERSION: &str = "openie-pipe-v1";

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Decompose,
    Resolve,
    Answer,
    Extract,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::Decompose,
        TemplateId::Resolve,
        TemplateId::Answer,
        TemplateId::Extract,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::Decompose => "decompose",
            TemplateId::Resolve => "resolve",
            TemplateId::Answer => "answer",
            TemplateId::Extract => "extract",
        }
    }

    fn body(&self) -> &'static str {
        match self {
            TemplateId::Decompose => DECOMPOSE,
            TemplateId::Resolve => RESOLVE,
            TemplateId::Answer => ANSWER,
            TemplateId::Extract => EXTRACT,
        }
    }

    /// Slots that identify the logical request. Mock transcripts may key on
    /// these instead of every binding so retrieved context can change freely.
    pub fn key_slots(&self) -> &'static [&'static str] {
        match self {
            TemplateId::Decompose => &["query"],
            TemplateId::Resolve => &["query", "searchable_clues", "fuzzy_clues", "resolved_clues"],
            TemplateId::Answer => &["query", "clues"],
            TemplateId::Extract => &["passage"],
        }
    }

    /// Every slot the template body references, in order of first appearance.
    pub fn slots(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for seg in segments(self.body()) {
            if let Segment::Slot(name) = seg {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown template id `{s}`")))
    }
}

enum Segment {
    Literal(&'static str),
    Slot(&'static str),
}

/// Splits a template on `{slot_name}` markers.
fn segments(body: &'static str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        let name = &rest[open + 1..open + close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            out.push(Segment::Literal(&rest[..open + 1]));
            rest = &rest[open + 1..];
            continue;
        }
        out.push(Segment::Literal(&rest[..open]));
        out.push(Segment::Slot(name));
        rest = &rest[open + close + 1..];
    }
    out.push(Segment::Literal(rest));
    out
}

/// A rendered prompt together with the bindings that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub template: TemplateId,
    pub bindings: Bindings,
    pub text: String,
}

/// Renders `template` in one pass, so binding values are never re-scanned for markers.
pub fn render_prompt(template: TemplateId, bindings: &Bindings) -> Result<Prompt, TemplateError> {
    let mut text = String::new();
    let mut used = Bindings::new();
    for seg in segments(template.body()) {
        match seg {
            Segment::Literal(lit) => text.push_str(lit),
            Segment::Slot(name) => {
                let value = bindings.get(name).ok_or_else(|| TemplateError::MissingSlot {
                    template: template.as_str().to_string(),
                    slot: name.to_string(),
                })?;
                text.push_str(value);
                used.insert(name.to_string(), value.clone());
            }
        }
    }
    Ok(Prompt {
        template,
        bindings: used,
        text,
    })
}

/// Stable fingerprint of a binding map: SHA-256 over the values ordered by slot name.
pub fn bindings_hash(bindings: &Bindings) -> String {
    let mut hasher = Sha256::new();
    for (key, value) in bindings {
        hasher.update(key.as_bytes());
        hasher.update([0x1f]);
        hasher.update(value.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(&hasher.finalize()[..16])
}

/// Fingerprint over the template's key slots only.
pub fn key_hash(template: TemplateId, bindings: &Bindings) -> String {
    let subset: Bindings = template
        .key_slots()
        .iter()
        .filter_map(|k| bindings.get(*k).map(|v| (k.to_string(), v.clone())))
        .collect();
    bindings_hash(&subset)
}

fn escape_field(field: &str) -> String {
    field.replace('|', "/")
}

/// One `subject | predicate | object` line per triplet, or `None` when empty.
pub fn render_clues<'a, I: IntoIterator<Item = &'a Triplet>>(triplets: I) -> String {
    let lines: Vec<String> = triplets.into_iter().map(triplet_line).collect();
    if lines.is_empty() {
        "None".to_string()
    } else {
        lines.join("\n")
    }
}

fn triplet_line(t: &Triplet) -> String {
    format!(
        "{} | {} | {}",
        escape_field(t.subject()),
        escape_field(t.predicate()),
        escape_field(t.object())
    )
}

/// A `Triples:` block in the shape the decomposition prompt asks for.
pub fn format_triples_block(triplets: &[Triplet]) -> String {
    let mut out = String::from("Triples:\n");
    for t in triplets {
        out.push_str(&triplet_line(t));
        out.push('\n');
    }
    out
}

/// Resolver output in the numbered block format of the resolving prompt.
pub fn format_resolution_blocks(resolved: &[Triplet], searchable: &[Triplet]) -> String {
    let mut out = String::new();
    for (label, list) in [("Fully Resolved Clue", resolved), ("Newly Searchable Clue", searchable)] {
        for (i, t) in list.iter().enumerate() {
            out.push_str(&format!(
                "{label} {}:\nSubject: {}\nPredicate: {}\nObject: {}\n\n",
                i + 1,
                t.subject(),
                t.predicate(),
                t.object()
            ));
        }
    }
    out
}

const DECOMPOSE: &str = r#"You are tasked with reasoning about a question and extracting the necessary knowledge triples to answer it.

Instructions:

1. Think step by step about what information is needed to answer this question

2. Form triples in the format: subject | predicate | object

3. Use "?" as placeholder for unknown entities

4. For comparative questions involving multiple entities, use distinct placeholders like ?entityA, ?directorA, ?directorB

5. Extract multiple triples if the question requires complex reasoning

Examples:

- Question: "What is the capital of France?"
  Reasoning: To answer this, I need to know what France's capital is.
  Triple: France | has capital | ?

- Question: "Who directed the movie that won Best Picture in 2020?"
  Reasoning: To answer this, I need to know which movie won Best Picture in 2020, and who directed that movie.
  Triples: ? | won Best Picture | 2020
           ? | is directed by | ?

- Question: "Which film whose director was born first, MovieA or MovieB?"
  Reasoning: To answer this, I need to know the director of each movie, and the birth year of each director to compare them.
  Triples: MovieA | is directed by | ?directorA
           MovieB | is directed by | ?directorB
           ?directorA | was born in | ?
           ?directorB | was born in | ?


Now analyze this question:

Question: {query}

Provide your response in this format:

Reasoning: [Your step-by-step reasoning about what information is needed]

Triples:
[List each triple on a new line in format: subject | predicate | object]"#;

const RESOLVE: &str = r#"Example:
        Context Propositions:
        Lothair II has mother Ermengarde of Tours

        Fully Resolved Clue 1:
        Subject: Lothair II
        Predicate: has mother
        Object: Ermengarde of Tours

        Newly Searchable Clue 1:
        Subject: Ermengarde of Tours
        Predicate: died on
        Object: ?

        ---

        Now apply the same process to the following clues:
        Use the context passages and propositions to resolve any '?' placeholders with as much detail as possible, grounding your answers in the passage content.
        Instructions:

        1. For searchable clues (one '?'), replace '?' with the correct entity to fully resolve it, including any relevant attributes.

        2. For fuzzy clues (multiple '?'), generate a Newly Searchable Clue by replacing one of the placeholders with the correct entity, including any relevant context.

        Original Query: {query}

        Searchable Clues: {searchable_clues}

        Fuzzy Clues: {fuzzy_clues}

        Context Passages: {context_passages}

        Context Propositions: {context_propositions}

        Previous Resolved Clues: {resolved_clues}

        Return two lists in this format:

        Fully Resolved Clue 1:
        Subject: ...
        Predicate: ...
        Object: ...

        Fully Resolved Clue 2:
        Subject: ...
        Predicate: ...
        Object: ...

        Newly Searchable Clue 1:
        Subject: ...
        Predicate: ...
        Object: ...

        Newly Searchable Clue 2:
        Subject: ...
        Predicate: ...
        Object: ...

        (Continue numbering accordingly)"#;

const ANSWER: &str = r#"Based on the reasoning clues, please answer the following question.

Question: {query}

Key Reasoning Clues:
{clues}

Instructions:

1. Analyze the question step by step

2. Use the reasoning clues to understand what information is needed

3. Provide ONLY a concise answer

Answer format requirements:

- For WH questions (who/what/where/when): Provide the exact entity, date, full name, or full place name only

- For yes/no questions: Answer only "yes" or "no"

- No explanations, reasoning, or additional text

- One entity or fact only

Answer:"#;

const EXTRACT: &str = r#"Extract the factual knowledge triples stated in the passage below.

Instructions:

1. Write each fact as one triple in the format: subject | predicate | object

2. Copy entity names verbatim from the passage and only state facts the passage supports

3. Replace pronouns with the entity they refer to

4. Never use "?" and never leave a field empty

5. Put one triple on each line

Passage:
{passage}

Triples:"#;

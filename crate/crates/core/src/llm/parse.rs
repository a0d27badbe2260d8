//! Parsers for the structured parts of model replies.

use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::triplet::{Slot, Triplet};

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[\s*#>_-]*triples?[\s*_]*:[\s*_]*(.*)$").unwrap())
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s*#>_-]*(fully\s+resolved|newly\s+searchable)\s+clues?\s*(\d+)?[\s*_]*:?[\s*_]*$")
            .unwrap()
    })
}

fn field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[\s*_>-]*(subject|predicate|object)[\s*_]*:(.*)$").unwrap())
}

/// Strips list bullets and numbering (`- `, `* `, `• `, `1. `, `2) `).
fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest.trim_start();
        }
    }
    line
}

/// Parses one `subject | predicate | object` line. `None` when the line is not
/// triplet-shaped; `Some(None)` when it is but a field is empty.
fn parse_pipe_line(line: &str) -> Option<Option<Triplet>> {
    let line = strip_list_marker(line).trim_matches(|c| c == '`' || c == '*').trim();
    if line.matches('|').count() != 2 {
        return None;
    }
    let mut parts = line.split('|').map(str::trim);
    let (s, p, o) = (parts.next()?, parts.next()?, parts.next()?);
    // an echoed format instruction, not a fact
    if p.eq_ignore_ascii_case("predicate") && o.trim_end_matches(']').eq_ignore_ascii_case("object") {
        return None;
    }
    Some(Triplet::new(s, p, o).ok())
}

/// Candidate lines: everything after the last `Triples:` marker (including
/// text on the marker line itself), or the whole reply when there is no marker.
fn triple_section(text: &str) -> Vec<&str> {
    let lines: Vec<&str> = text.lines().collect();
    let last_marker = lines.iter().rposition(|l| marker_re().is_match(l));
    match last_marker {
        None => lines,
        Some(idx) => {
            let caps = marker_re().captures(lines[idx]).expect("matched above");
            let inline = caps.get(1).map_or("", |m| m.as_str());
            std::iter::once(inline).chain(lines[idx + 1..].iter().copied()).collect()
        }
    }
}

fn collect_triplets(text: &str) -> (Vec<Triplet>, usize) {
    let mut out: Vec<Triplet> = Vec::new();
    let mut malformed = 0;
    for line in triple_section(text) {
        match parse_pipe_line(line) {
            None => {}
            Some(None) => malformed += 1,
            Some(Some(t)) if !out.contains(&t) => out.push(t),
            Some(Some(_)) => {}
        }
    }
    (out, malformed)
}

/// Triplets from a decomposition reply, in order, exact repeats removed.
pub fn parse_decomposition(text: &str) -> Result<Vec<Triplet>> {
    let (triplets, malformed) = collect_triplets(text);
    if malformed > 0 {
        tracing::debug!(malformed, "skipped decomposition lines with empty fields");
    }
    if triplets.is_empty() {
        return Err(Error::DecompositionFailed);
    }
    Ok(triplets)
}

/// Placeholder-free triplets from an extraction reply, plus how many lines were dropped.
pub fn parse_extraction(text: &str) -> (Vec<Triplet>, usize) {
    let (all, malformed) = collect_triplets(text);
    let before = all.len();
    let kept: Vec<Triplet> = all.into_iter().filter(|t| t.placeholder_count() == 0).collect();
    let dropped = malformed + (before - kept.len());
    if dropped > 0 {
        tracing::debug!(dropped, "dropped extracted triplets with placeholders or empty fields");
    }
    (kept, dropped)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResolverOutput {
    pub resolved: Vec<Triplet>,
    pub searchable: Vec<Triplet>,
    /// Blocks that were missing a field or had an empty one.
    pub skipped: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum BlockKind {
    Resolved,
    Searchable,
}

#[derive(Default)]
struct Block {
    subject: Option<String>,
    predicate: Option<String>,
    object: Option<String>,
}

impl Block {
    fn set(&mut self, slot: Slot, value: String) {
        let cell = match slot {
            Slot::Subject => &mut self.subject,
            Slot::Predicate => &mut self.predicate,
            Slot::Object => &mut self.object,
        };
        if cell.is_none() {
            *cell = Some(value);
        }
    }

    fn finish(self) -> Option<Triplet> {
        Triplet::new(&self.subject?, &self.predicate?, &self.object?).ok()
    }
}

/// Reads `Fully Resolved Clue n` / `Newly Searchable Clue n` blocks. Never fails:
/// a reply without blocks is a round that made no progress.
pub fn parse_resolution(text: &str) -> ResolverOutput {
    let mut out = ResolverOutput::default();
    let mut current: Option<(BlockKind, Block)> = None;

    let flush = |current: &mut Option<(BlockKind, Block)>, out: &mut ResolverOutput| {
        if let Some((kind, block)) = current.take() {
            match block.finish() {
                Some(t) => {
                    let list = match kind {
                        BlockKind::Resolved => &mut out.resolved,
                        BlockKind::Searchable => &mut out.searchable,
                    };
                    if !list.contains(&t) {
                        list.push(t);
                    }
                }
                None => {
                    tracing::warn!("skipping resolver block with a missing or empty field");
                    out.skipped += 1;
                }
            }
        }
    };

    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(caps) = header_re().captures(trimmed) {
            flush(&mut current, &mut out);
            let kind = if caps[1].to_ascii_lowercase().starts_with("fully") {
                BlockKind::Resolved
            } else {
                BlockKind::Searchable
            };
            current = Some((kind, Block::default()));
            continue;
        }
        if trimmed.starts_with("---") {
            flush(&mut current, &mut out);
            continue;
        }
        let Some((_, block)) = current.as_mut() else {
            continue;
        };
        if let Some(caps) = field_re().captures(trimmed) {
            let slot = match caps[1].to_ascii_lowercase().as_str() {
                "subject" => Slot::Subject,
                "predicate" => Slot::Predicate,
                _ => Slot::Object,
            };
            let value = caps[2].trim().trim_matches(|c| c == '*' || c == '`').trim();
            block.set(slot, value.to_string());
        }
    }
    flush(&mut current, &mut out);
    out
}

//! Replay backend for offline runs.
//!
//! A transcript is JSONL; each line maps `(template_id, bindings_hash)` to a
//! canned reply. Lookup tries the hash of all bindings first, then the hash of
//! the template's key slots only. Hand-written fixtures can give the key slots
//! verbatim under `key` and omit the hash.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LlmError, Result};

use super::gateway::{ChatBackend, RawCompletion};
use super::prompts::{bindings_hash, key_hash, Bindings, Prompt, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    pub template_id: TemplateId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bindings_hash: Option<String>,
    /// Key-slot bindings, used to derive the hash when `bindings_hash` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Bindings>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

impl MockEntry {
    fn fingerprint(&self) -> Option<String> {
        self.bindings_hash
            .clone()
            .or_else(|| self.key.as_ref().map(|k| key_hash(self.template_id, k)))
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    entries: HashMap<(TemplateId, String), MockEntry>,
    strict: bool,
}

impl MockBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = MockEntry>, strict: bool) -> Result<Self> {
        let mut map: HashMap<(TemplateId, String), MockEntry> = HashMap::new();
        for entry in entries {
            let fp = entry.fingerprint().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "transcript entry for `{}` has neither bindings_hash nor key",
                    entry.template_id
                ))
            })?;
            if let Some(prev) = map.get(&(entry.template_id, fp.clone())) {
                if prev.response != entry.response {
                    return Err(Error::InvalidArgument(format!(
                        "conflicting transcript entries for `{}` / {fp}",
                        entry.template_id
                    )));
                }
            }
            map.insert((entry.template_id, fp), entry);
        }
        Ok(Self {
            entries: map,
            strict,
        })
    }

    pub fn load(path: &Path, strict: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: MockEntry = serde_json::from_str(line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            entries.push(entry);
        }
        Self::from_entries(entries, strict)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, prompt: &Prompt) -> Option<&MockEntry> {
        let full = bindings_hash(&prompt.bindings);
        self.entries
            .get(&(prompt.template, full))
            .or_else(|| {
                let key = key_hash(prompt.template, &prompt.bindings);
                self.entries.get(&(prompt.template, key))
            })
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, prompt: &Prompt) -> Result<RawCompletion, LlmError> {
        match self.lookup(prompt) {
            Some(entry) => Ok(RawCompletion {
                text: entry.response.clone(),
                input_tokens: entry.input_tokens,
                output_tokens: entry.output_tokens,
            }),
            None if self.strict => Err(LlmError::UnmatchedPrompt {
                template_id: prompt.template.to_string(),
                bindings_hash: bindings_hash(&prompt.bindings),
            }),
            None => {
                tracing::warn!(template = %prompt.template, "no transcript entry; replying with empty text");
                Ok(RawCompletion::default())
            }
        }
    }
}

/// Builder for transcripts keyed on key-slot values.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: Vec<MockEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a reply for `template` when its key slots take the given values.
    pub fn reply(mut self, template: TemplateId, key: &[(&str, &str)], response: impl Into<String>) -> Self {
        let key: Bindings = key.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        self.entries.push(MockEntry {
            template_id: template,
            bindings_hash: Some(key_hash(template, &key)),
            key: Some(key),
            response: response.into(),
            input_tokens: None,
            output_tokens: None,
        });
        self
    }

    pub fn entries(&self) -> &[MockEntry] {
        &self.entries
    }

    pub fn backend(&self, strict: bool) -> Result<MockBackend> {
        MockBackend::from_entries(self.entries.clone(), strict)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for entry in &self.entries {
            let line = serde_json::to_string(entry).map_err(|e| Error::json("transcript entry", e))?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::render_prompt;

    fn decompose(q: &str) -> Prompt {
        let b: Bindings = [("query".to_string(), q.to_string())].into_iter().collect();
        render_prompt(TemplateId::Decompose, &b).unwrap()
    }

    #[test]
    fn exact_hash_match() {
        let p = decompose("What is the capital of France?");
        let backend = MockBackend::from_entries(
            [MockEntry {
                template_id: TemplateId::Decompose,
                bindings_hash: Some(bindings_hash(&p.bindings)),
                key: None,
                response: "Triples:\nFrance | has capital | ?".into(),
                input_tokens: Some(10),
                output_tokens: Some(5),
            }],
            true,
        )
        .unwrap();
        let out = backend.complete(&p).unwrap();
        assert_eq!(out.text, "Triples:\nFrance | has capital | ?");
        assert_eq!(out.input_tokens, Some(10));
    }

    #[test]
    fn strict_and_lax_misses() {
        let backend = Transcript::new().backend(true).unwrap();
        let err = backend.complete(&decompose("x")).unwrap_err();
        match err {
            LlmError::UnmatchedPrompt { template_id, .. } => assert_eq!(template_id, "decompose"),
            other => panic!("unexpected {other:?}"),
        }
        let lax = Transcript::new().backend(false).unwrap();
        assert_eq!(lax.complete(&decompose("x")).unwrap().text, "");
    }

    #[test]
    fn key_slot_fallback_ignores_context() {
        let t = Transcript::new().reply(
            TemplateId::Answer,
            &[("query", "q"), ("clues", "a | b | c")],
            "Answer: c",
        );
        let backend = t.backend(true).unwrap();
        let b: Bindings = [("query", "q"), ("clues", "a | b | c")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let p = render_prompt(TemplateId::Answer, &b).unwrap();
        assert_eq!(backend.complete(&p).unwrap().text, "Answer: c");
    }

    #[test]
    fn round_trips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        Transcript::new()
            .reply(TemplateId::Decompose, &[("query", "q")], "Triples:\na | b | ?")
            .write_jsonl(&path)
            .unwrap();
        let backend = MockBackend::load(&path, true).unwrap();
        assert_eq!(backend.len(), 1);
        assert_eq!(backend.complete(&decompose("q")).unwrap().text, "Triples:\na | b | ?");
    }

    #[test]
    fn key_only_entries_and_conflicts() {
        let line = r#"{"template_id":"decompose","key":{"query":"q"},"response":"r"}"#;
        let entry: MockEntry = serde_json::from_str(line).unwrap();
        let backend = MockBackend::from_entries([entry.clone()], true).unwrap();
        assert_eq!(backend.complete(&decompose("q")).unwrap().text, "r");
        let mut other = entry.clone();
        other.response = "s".into();
        assert!(MockBackend::from_entries([entry, other], true).is_err());
    }
}

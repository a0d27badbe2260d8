//! Triplets, placeholders, and the three-way triplet taxonomy.
//!
//! A triplet field is a placeholder when it starts with `?`. A bare `?` is an
//! anonymous unknown; `?directorA` is a named unknown whose name can be shared
//! across triplets of the same query.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TripletError;

/// Which triplet position a field occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Subject,
    Predicate,
    Object,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Subject, Slot::Predicate, Slot::Object];
}

/// Interpretation of a single triplet field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field<'a> {
    Known(&'a str),
    Anonymous,
    Named(&'a str),
}

impl<'a> Field<'a> {
    pub fn parse(text: &'a str) -> Self {
        match text.strip_prefix('?') {
            None => Field::Known(text),
            Some(rest) => {
                let name = rest.trim();
                if name.is_empty() {
                    Field::Anonymous
                } else {
                    Field::Named(name)
                }
            }
        }
    }

    pub fn is_placeholder(&self) -> bool {
        !matches!(self, Field::Known(_))
    }
}

/// Returns true iff `field` is a placeholder (`?` or `?name`).
pub fn is_placeholder(field: &str) -> bool {
    field.trim_start().starts_with('?')
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_field(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A (subject, predicate, object) statement, possibly containing placeholders.
///
/// Fields are stored normalized, so derived equality, ordering and hashing are
/// whitespace-insensitive at the edges and across internal runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawTriplet", into = "RawTriplet")]
pub struct Triplet {
    subject: String,
    predicate: String,
    object: String,
}

#[derive(Serialize, Deserialize)]
struct RawTriplet {
    subject: String,
    predicate: String,
    object: String,
}

impl TryFrom<RawTriplet> for Triplet {
    type Error = TripletError;

    fn try_from(raw: RawTriplet) -> Result<Self, Self::Error> {
        Triplet::new(&raw.subject, &raw.predicate, &raw.object)
    }
}

impl From<Triplet> for RawTriplet {
    fn from(t: Triplet) -> Self {
        RawTriplet {
            subject: t.subject,
            predicate: t.predicate,
            object: t.object,
        }
    }
}

impl Triplet {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Result<Self, TripletError> {
        let subject = normalize_field(subject);
        let predicate = normalize_field(predicate);
        let object = normalize_field(object);
        for (slot, value) in [
            (Slot::Subject, &subject),
            (Slot::Predicate, &predicate),
            (Slot::Object, &object),
        ] {
            if value.is_empty() {
                return Err(TripletError::EmptyField(slot));
            }
        }
        Ok(Self {
            subject,
            predicate,
            object,
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn get(&self, slot: Slot) -> &str {
        match slot {
            Slot::Subject => &self.subject,
            Slot::Predicate => &self.predicate,
            Slot::Object => &self.object,
        }
    }

    pub fn fields(&self) -> [&str; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn field(&self, slot: Slot) -> Field<'_> {
        Field::parse(self.get(slot))
    }

    pub fn placeholder_count(&self) -> usize {
        count_placeholders(self)
    }

    pub fn class(&self) -> TripletClass {
        classify(self)
    }

    /// Returns a copy with `slot` replaced. Used for named-placeholder substitution.
    pub fn with(&self, slot: Slot, value: &str) -> Result<Self, TripletError> {
        let mut fields = [
            self.subject.as_str(),
            self.predicate.as_str(),
            self.object.as_str(),
        ];
        let idx = Slot::ALL.iter().position(|s| *s == slot).unwrap_or(0);
        fields[idx] = value;
        Triplet::new(fields[0], fields[1], fields[2])
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | {}", self.subject, self.predicate, self.object)
    }
}

/// Number of placeholder fields, in `0..=3`.
pub fn count_placeholders(t: &Triplet) -> usize {
    t.fields().iter().filter(|f| is_placeholder(f)).count()
}

/// The taxonomy that decides how a triplet is handled by the resolution loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletClass {
    /// No placeholders: a known fact.
    Resolved,
    /// Exactly one placeholder: two known fields make a focused search.
    Searchable,
    /// Two or more placeholders: must be narrowed before it can be searched.
    Fuzzy,
}

pub fn classify(t: &Triplet) -> TripletClass {
    match count_placeholders(t) {
        0 => TripletClass::Resolved,
        1 => TripletClass::Searchable,
        _ => TripletClass::Fuzzy,
    }
}

//! Normalized keyword sets.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A set of lowercase, trimmed, deduplicated keywords. Multiword keywords are
/// kept intact (internal whitespace collapsed to single spaces).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "BTreeSet<String>", into = "BTreeSet<String>")]
pub struct KeywordSet(BTreeSet<String>);

pub fn normalize_keyword(raw: &str) -> Option<String> {
    let k = raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    (!k.is_empty()).then_some(k)
}

impl KeywordSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, raw: &str) -> bool {
        match normalize_keyword(raw) {
            Some(k) => self.0.insert(k),
            None => false,
        }
    }

    pub fn contains(&self, keyword: &str) -> bool {
        normalize_keyword(keyword).is_some_and(|k| self.0.contains(&k))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn difference(&self, other: &KeywordSet) -> KeywordSet {
        KeywordSet(self.0.difference(&other.0).cloned().collect())
    }

    pub fn union(&self, other: &KeywordSet) -> KeywordSet {
        KeywordSet(self.0.union(&other.0).cloned().collect())
    }

    pub fn is_disjoint(&self, other: &KeywordSet) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn is_subset(&self, other: &KeywordSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl<S: AsRef<str>> FromIterator<S> for KeywordSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = KeywordSet::new();
        for k in iter {
            set.insert(k.as_ref());
        }
        set
    }
}

impl From<BTreeSet<String>> for KeywordSet {
    fn from(raw: BTreeSet<String>) -> Self {
        raw.iter().collect()
    }
}

impl From<KeywordSet> for BTreeSet<String> {
    fn from(set: KeywordSet) -> Self {
        set.0
    }
}

impl fmt::Display for KeywordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.iter().collect();
        f.write_str(&parts.join(", "))
    }
}

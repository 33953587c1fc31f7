use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

/// Lowercases and joins whitespace-separated words with `_`.
pub fn normalize_concept(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleSource {
    Dump,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub source: TripleSource,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str, source: TripleSource) -> Result<Self> {
        let head = normalize_concept(head);
        let tail = normalize_concept(tail);
        if head.is_empty() || tail.is_empty() {
            return Err(Error::Invalid("triple with empty head or tail".into()));
        }
        Ok(Triple {
            head,
            relation: relation.trim().to_string(),
            tail,
            source,
        })
    }

    /// The endpoint opposite `node`, if `node` is an endpoint.
    pub fn other(&self, node: &str) -> Option<&str> {
        if self.head == node {
            Some(&self.tail)
        } else if self.tail == node {
            Some(&self.head)
        } else {
            None
        }
    }
}

/// Triples with undirected incidence lists. Stored triples keep the dump's
/// orientation.
#[derive(Debug, Clone, Default)]
pub struct TripleStore {
    triples: Vec<Triple>,
    incidence: BTreeMap<String, Vec<usize>>,
}

impl TripleStore {
    pub fn new(triples: Vec<Triple>) -> Self {
        let mut incidence: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in triples.iter().enumerate() {
            incidence.entry(t.head.clone()).or_default().push(i);
            if t.tail != t.head {
                incidence.entry(t.tail.clone()).or_default().push(i);
            }
        }
        TripleStore { triples, incidence }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(origin, i + 1, format!("expected 3 columns, found {}", cols.len())));
            }
            let triple = Triple::new(cols[0], cols[1], cols[2], TripleSource::Dump)
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
            triples.push(triple);
        }
        Ok(TripleStore::new(triples))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains_node(&self, concept: &str) -> bool {
        self.incidence.contains_key(concept)
    }

    /// Triples touching `concept`, in dump order.
    pub fn incident(&self, concept: &str) -> impl Iterator<Item = &Triple> {
        self.incidence
            .get(concept)
            .into_iter()
            .flatten()
            .map(move |&i| &self.triples[i])
    }

    /// Distinct neighbours of `concept`, in first-seen order.
    pub fn neighbors(&self, concept: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in self.incident(concept) {
            if let Some(other) = t.other(concept) {
                if other != concept && !out.contains(&other) {
                    out.push(other);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_concepts() {
        assert_eq!(normalize_concept("Pad  Thai"), "pad_thai");
        assert_eq!(normalize_concept("  "), "");
    }

    #[test]
    fn parses_dump_and_indexes_both_ends() {
        let store = TripleStore::parse("food\tRelatedTo\tpasta\npizza\tIsA\tfood\n", "mem").unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.neighbors("food"), vec!["pasta", "pizza"]);
        assert_eq!(store.neighbors("pasta"), vec!["food"]);
        assert!(TripleStore::parse("a\tb\n", "mem").is_err());
        assert!(TripleStore::parse("a\tRelatedTo\t \n", "mem").is_err());
    }
}

//! Candidate aspect spans from syntactic annotations, and the decision of
//! which of them receive knowledge, by matching against a domain graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TaggedSentence};
use crate::error::{Error, Result};
use crate::kg::DomainKG;

/// Tag sets driving candidate extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRules {
    pub noun_tags: BTreeSet<String>,
    /// Dependency labels that extend a noun leftward into a phrase.
    pub chain_labels: BTreeSet<String>,
}

impl Default for CandidateRules {
    fn default() -> Self {
        CandidateRules {
            noun_tags: ["NOUN", "PROPN"].into_iter().map(String::from).collect(),
            chain_labels: ["amod", "compound"].into_iter().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub start: usize,
    pub end: usize,
    pub phrase: String,
}

/// Lowercased tokens joined with `_`.
pub fn phrase_of(tokens: &[String]) -> String {
    tokens.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>().join("_")
}

pub fn extract_candidates(sentence: &TaggedSentence) -> Vec<CandidateSpan> {
    extract_candidates_with(sentence, &CandidateRules::default())
}

/// Every noun yields a span that extends left over the contiguous run of
/// `amod`/`compound` tokens ending at it. Spans nested inside a longer one
/// (a compound noun inside its phrase) are dropped.
pub fn extract_candidates_with(sentence: &TaggedSentence, rules: &CandidateRules) -> Vec<CandidateSpan> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for t in 0..sentence.len() {
        if !rules.noun_tags.contains(&sentence.pos[t]) {
            continue;
        }
        let mut start = t;
        while start > 0 && rules.chain_labels.contains(&sentence.dep_label[start - 1]) {
            start -= 1;
        }
        // A later span starting at or before `start` swallows this one.
        while let Some(&(s, _)) = spans.last() {
            if start <= s {
                spans.pop();
            } else {
                break;
            }
        }
        spans.push((start, t + 1));
    }
    spans
        .into_iter()
        .map(|(start, end)| CandidateSpan {
            start,
            end,
            phrase: phrase_of(&sentence.tokens[start..end]),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgMatch {
    pub matched_node: String,
    pub match_start: usize,
}

/// Drops a trailing plural `s` (`prices` -> `price`); `None` when the word
/// does not look plural.
fn naive_singular(phrase: &str) -> Option<String> {
    let stem = phrase.strip_suffix('s')?;
    if phrase.ends_with("ss") || stem.rsplit('_').next().map_or(0, str::len) < 2 {
        return None;
    }
    Some(stem.to_string())
}

/// Looks up the span, then successively shorter suffixes, in the graph.
pub fn match_kg(span: &CandidateSpan, sentence: &TaggedSentence, kg: &DomainKG) -> Option<KgMatch> {
    for start in span.start..span.end {
        let phrase = phrase_of(&sentence.tokens[start..span.end]);
        if kg.contains_concept(&phrase) {
            return Some(KgMatch { matched_node: phrase, match_start: start });
        }
        if let Some(singular) = naive_singular(&phrase) {
            if kg.contains_concept(&singular) {
                return Some(KgMatch { matched_node: singular, match_start: start });
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedMatch {
    /// The matched suffix of the candidate.
    pub span: CandidateSpan,
    pub matched_node: String,
    pub match_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub sentence_index: usize,
    pub matches: Vec<PlannedMatch>,
}

impl InjectionPlan {
    pub fn empty(sentence_index: usize) -> Self {
        InjectionPlan { sentence_index, matches: Vec::new() }
    }

    /// Checks ordering, overlap and bounds against a sentence of length `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut prev_end = 0;
        for m in &self.matches {
            let s = &m.span;
            if s.start >= s.end || s.end > n || m.match_start != s.start {
                return Err(Error::Invalid(format!(
                    "plan span [{}, {}) invalid for sentence {} of length {n}",
                    s.start, s.end, self.sentence_index
                )));
            }
            if s.start < prev_end {
                return Err(Error::Invalid(format!(
                    "plan spans overlap or are unsorted in sentence {}",
                    self.sentence_index
                )));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

pub fn plan_injections(sentence_index: usize, sentence: &TaggedSentence, kg: &DomainKG) -> InjectionPlan {
    plan_injections_with(sentence_index, sentence, kg, &CandidateRules::default())
}

pub fn plan_injections_with(
    sentence_index: usize,
    sentence: &TaggedSentence,
    kg: &DomainKG,
    rules: &CandidateRules,
) -> InjectionPlan {
    let matches = extract_candidates_with(sentence, rules)
        .into_iter()
        .filter_map(|cand| {
            let m = match_kg(&cand, sentence, kg)?;
            Some(PlannedMatch {
                span: CandidateSpan {
                    start: m.match_start,
                    end: cand.end,
                    phrase: phrase_of(&sentence.tokens[m.match_start..cand.end]),
                },
                matched_node: m.matched_node,
                match_start: m.match_start,
            })
        })
        .collect();
    InjectionPlan { sentence_index, matches }
}

pub fn plan_corpus(corpus: &Corpus, kg: &DomainKG) -> Vec<InjectionPlan> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| plan_injections(i, s, kg))
        .collect()
}

/// `SENTENCE_ID START END MATCHED_NODE` rows.
pub fn plans_to_tsv(plans: &[InjectionPlan]) -> String {
    let mut out = String::new();
    for plan in plans {
        for m in &plan.matches {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", plan.sentence_index, m.span.start, m.span.end, m.matched_node));
        }
    }
    out
}

/// Reads plan rows back; sentences without rows get empty plans.
pub fn plans_from_tsv(text: &str, corpus: &Corpus, origin: &str) -> Result<Vec<InjectionPlan>> {
    let mut plans: Vec<InjectionPlan> = (0..corpus.len()).map(InjectionPlan::empty).collect();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(origin, i + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(origin, i + 1, format!("bad integer `{s}`")));
        let (sid, start, end) = (num(cols[0])?, num(cols[1])?, num(cols[2])?);
        let sentence = corpus
            .sentences
            .get(sid)
            .ok_or_else(|| Error::parse(origin, i + 1, format!("sentence {sid} out of range")))?;
        if start >= end || end > sentence.len() {
            return Err(Error::parse(origin, i + 1, format!("span [{start}, {end}) out of bounds")));
        }
        plans[sid].matches.push(PlannedMatch {
            span: CandidateSpan { start, end, phrase: phrase_of(&sentence.tokens[start..end]) },
            matched_node: cols[3].to_string(),
            match_start: start,
        });
    }
    for (plan, sentence) in plans.iter().zip(&corpus.sentences) {
        plan.validate(sentence.len())?;
    }
    Ok(plans)
}

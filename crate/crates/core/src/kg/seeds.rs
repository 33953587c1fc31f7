use std::collections::BTreeMap;

use crate::annotate::{extract_candidates_with, CandidateRules};
use crate::corpus::Corpus;

/// Aggregate TF-IDF over sentence documents for every candidate noun phrase.
///
/// `tf` is the raw count of a phrase in a sentence and
/// `idf = ln((1 + N) / (1 + df)) + 1`; a phrase scores `sum(tf * idf)`.
pub fn phrase_scores(corpus: &Corpus, rules: &CandidateRules) -> BTreeMap<String, f64> {
    let docs = corpus.sentences.len() as f64;
    let mut total: BTreeMap<String, usize> = BTreeMap::new();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for sentence in &corpus.sentences {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for cand in extract_candidates_with(sentence, rules) {
            *seen.entry(cand.phrase).or_default() += 1;
        }
        for (phrase, count) in seen {
            *total.entry(phrase.clone()).or_default() += count;
            *df.entry(phrase).or_default() += 1;
        }
    }
    total
        .into_iter()
        .map(|(phrase, count)| {
            let idf = ((1.0 + docs) / (1.0 + df[&phrase] as f64)).ln() + 1.0;
            (phrase, count as f64 * idf)
        })
        .collect()
}

/// Top-`k` noun phrases by aggregate TF-IDF; ties go to the lexicographically
/// smaller phrase.
pub fn select_seed_terms(corpus: &Corpus, k: usize) -> Vec<String> {
    select_seed_terms_with(corpus, k, &CandidateRules::default())
}

pub fn select_seed_terms_with(corpus: &Corpus, k: usize, rules: &CandidateRules) -> Vec<String> {
    let mut scored: Vec<(String, f64)> = phrase_scores(corpus, rules).into_iter().collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(p, _)| p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaggedSentence;

    fn noun(word: &str, tag: &str) -> TaggedSentence {
        TaggedSentence::new(vec![word.into()], vec![tag.into()], vec![0], vec!["root".into()], None).unwrap()
    }

    #[test]
    fn top_two_by_hand() {
        let corpus = Corpus::new("d", vec![noun("food", "NOUN"), noun("food", "NOUN"), noun("wine", "NOUN")]).unwrap();
        // food: 2 * (ln(4/3) + 1) = 2.575; wine: ln(2) + 1 = 1.693
        let scores = phrase_scores(&corpus, &CandidateRules::default());
        assert!((scores["food"] - 2.0 * ((4.0f64 / 3.0).ln() + 1.0)).abs() < 1e-12);
        assert_eq!(select_seed_terms(&corpus, 2), vec!["food", "wine"]);
        assert_eq!(select_seed_terms(&corpus, 10).len(), 2);
    }

    #[test]
    fn no_nouns_no_seeds() {
        let corpus = Corpus::new("d", vec![noun("great", "ADJ")]).unwrap();
        assert!(select_seed_terms(&corpus, 3).is_empty());
    }

    #[test]
    fn ties_are_lexicographic() {
        let corpus = Corpus::new("d", vec![noun("zebra", "NOUN"), noun("apple", "NOUN")]).unwrap();
        assert_eq!(select_seed_terms(&corpus, 1), vec!["apple"]);
    }
}

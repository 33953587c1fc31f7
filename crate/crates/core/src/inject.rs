//! Pivot-token enrichment.
//!
//! A `[DOMAIN-B]` pivot follows the first token of a knowledge-bearing span
//! and a `[DOMAIN-I]` pivot follows each of its remaining tokens. Target data
//! is enriched from injection plans; training data can instead be enriched
//! stochastically so that pivots hit gold aspects with a chosen precision and
//! recall.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::annotate::{plan_injections, InjectionPlan};
use crate::corpus::{tsv_blocks, sentence_from_rows, write_sentence_rows, BioLabel, Corpus, Span, TaggedSentence};
use crate::error::{Error, Result};
use crate::eval::{pivot_counts, PivotCounts};
use crate::kg::DomainKG;
use crate::rng;

pub const PIVOT_B: &str = "[DOMAIN-B]";
pub const PIVOT_I: &str = "[DOMAIN-I]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PivotKind {
    B,
    I,
}

impl PivotKind {
    pub fn surface(self) -> &'static str {
        match self {
            PivotKind::B => PIVOT_B,
            PivotKind::I => PIVOT_I,
        }
    }
}

/// Token sequence with pivots interleaved. `origin[k]` is the original index
/// of position `k`, or `None` for a pivot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedSequence {
    pub tokens: Vec<String>,
    pub origin: Vec<Option<usize>>,
    pub pivot_kinds: Vec<Option<PivotKind>>,
    /// Gold labels aligned to enriched positions; pivots carry `N`.
    pub labels: Option<Vec<BioLabel>>,
}

impl EnrichedSequence {
    /// Builds the sequence from per-original-token pivot flags.
    pub fn from_flags(sentence: &TaggedSentence, flags: &[Option<PivotKind>]) -> Result<Self> {
        if flags.len() != sentence.len() {
            return Err(Error::Shape(format!("{} pivot flags for {} tokens", flags.len(), sentence.len())));
        }
        let cap = sentence.len() + flags.iter().flatten().count();
        let mut seq = EnrichedSequence {
            tokens: Vec::with_capacity(cap),
            origin: Vec::with_capacity(cap),
            pivot_kinds: Vec::with_capacity(cap),
            labels: sentence.labels.as_ref().map(|_| Vec::with_capacity(cap)),
        };
        for (i, token) in sentence.tokens.iter().enumerate() {
            seq.tokens.push(token.clone());
            seq.origin.push(Some(i));
            seq.pivot_kinds.push(None);
            if let (Some(out), Some(gold)) = (seq.labels.as_mut(), sentence.labels.as_ref()) {
                out.push(gold[i]);
            }
            if let Some(kind) = flags[i] {
                seq.tokens.push(kind.surface().to_string());
                seq.origin.push(None);
                seq.pivot_kinds.push(Some(kind));
                if let Some(out) = seq.labels.as_mut() {
                    out.push(BioLabel::N);
                }
            }
        }
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pivot_count(&self) -> usize {
        self.pivot_kinds.iter().flatten().count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.origin.len() != n || self.pivot_kinds.len() != n || self.labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::Shape("enriched sequence columns differ in length".into()));
        }
        let mut expected = 0;
        for k in 0..n {
            match (self.origin[k], self.pivot_kinds[k]) {
                (Some(o), None) => {
                    if o != expected {
                        return Err(Error::Invalid(format!("origin map out of order at position {k}")));
                    }
                    expected += 1;
                }
                (None, Some(kind)) => {
                    if self.tokens[k] != kind.surface() {
                        return Err(Error::Invalid(format!("pivot at {k} has surface `{}`", self.tokens[k])));
                    }
                    if k == 0 || self.origin[k - 1].is_none() {
                        return Err(Error::Invalid(format!("pivot at {k} does not follow a token")));
                    }
                    if kind == PivotKind::I && (k < 2 || self.pivot_kinds[k - 2].is_none()) {
                        return Err(Error::Invalid(format!("inside pivot at {k} does not continue a span")));
                    }
                }
                _ => return Err(Error::Invalid(format!("position {k} is neither token nor pivot"))),
            }
        }
        Ok(())
    }
}

/// Places pivots for every matched span in `plan`.
pub fn insert_pivots(sentence: &TaggedSentence, plan: &InjectionPlan) -> Result<EnrichedSequence> {
    plan.validate(sentence.len())?;
    let mut flags = vec![None; sentence.len()];
    for m in &plan.matches {
        mark_span(&mut flags, Span::new(m.span.start, m.span.end));
    }
    EnrichedSequence::from_flags(sentence, &flags)
}

fn mark_span(flags: &mut [Option<PivotKind>], span: Span) {
    flags[span.start] = Some(PivotKind::B);
    for f in &mut flags[span.start + 1..span.end] {
        *f = Some(PivotKind::I);
    }
}

/// Original tokens plus, per original token, the pivot that followed it.
pub fn strip_pivots(seq: &EnrichedSequence) -> Result<(Vec<String>, Vec<Option<PivotKind>>)> {
    seq.validate()?;
    let mut tokens = Vec::new();
    let mut flags: Vec<Option<PivotKind>> = Vec::new();
    for k in 0..seq.len() {
        match seq.pivot_kinds[k] {
            None => {
                tokens.push(seq.tokens[k].clone());
                flags.push(None);
            }
            Some(kind) => {
                // validate() guarantees a preceding token
                *flags.last_mut().expect("pivot follows a token") = Some(kind);
            }
        }
    }
    Ok((tokens, flags))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotPolicy {
    pub precision: f64,
    pub recall: f64,
    pub rng_seed: u64,
}

impl PivotPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.precision > 0.0 && self.precision <= 1.0) || !(0.0..=1.0).contains(&self.recall) {
            return Err(Error::Config(format!(
                "pivot targets need precision in (0, 1] and recall in [0, 1], got ({}, {})",
                self.precision, self.recall
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionStats {
    pub gold_spans: usize,
    pub true_spans: usize,
    pub false_requested: usize,
    pub false_placed: usize,
    pub achieved_precision: f64,
    pub achieved_recall: f64,
}

/// Enriches `round(r * A)` randomly chosen gold aspect spans and places
/// `round(T * (1 - p) / p)` single `B` pivots after random `N` tokens.
pub fn stochastic_train_insertion(corpus: &Corpus, policy: &PivotPolicy) -> Result<(Vec<EnrichedSequence>, InsertionStats)> {
    policy.validate()?;
    if !corpus.is_labeled() {
        return Err(Error::Invalid("stochastic insertion needs a labeled corpus".into()));
    }
    let spans: Vec<(usize, Span)> = corpus
        .sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.aspect_spans().into_iter().map(move |sp| (i, sp)))
        .collect();
    let a = spans.len();
    let t = ((policy.recall * a as f64).round() as usize).min(a);
    let f_requested = if t == 0 {
        0
    } else {
        (t as f64 * (1.0 - policy.precision) / policy.precision).round() as usize
    };

    let mut rng = rng::substream(policy.rng_seed, rng::INSERTION_STREAM);
    let mut flags: Vec<Vec<Option<PivotKind>>> = corpus.sentences.iter().map(|s| vec![None; s.len()]).collect();
    let mut chosen: Vec<usize> = sample(&mut rng, a, t).into_vec();
    chosen.sort_unstable();
    for idx in chosen {
        let (i, span) = spans[idx];
        mark_span(&mut flags[i], span);
    }

    let negatives: Vec<(usize, usize)> = corpus
        .sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let labels = s.labels.as_deref().unwrap_or_default();
            let row = &flags[i];
            labels
                .iter()
                .enumerate()
                .filter(move |(j, l)| **l == BioLabel::N && row[*j].is_none())
                .map(move |(j, _)| (i, j))
        })
        .collect();
    let f_placed = f_requested.min(negatives.len());
    if f_placed < f_requested {
        log::warn!("only {f_placed} of {f_requested} false pivots could be placed");
    }
    let mut false_idx = sample(&mut rng, negatives.len(), f_placed).into_vec();
    false_idx.sort_unstable();
    for idx in false_idx {
        let (i, j) = negatives[idx];
        flags[i][j] = Some(PivotKind::B);
    }

    let seqs = corpus
        .sentences
        .iter()
        .zip(&flags)
        .map(|(s, f)| EnrichedSequence::from_flags(s, f))
        .collect::<Result<Vec<_>>>()?;
    let stats = InsertionStats {
        gold_spans: a,
        true_spans: t,
        false_requested: f_requested,
        false_placed: f_placed,
        achieved_precision: if t + f_placed == 0 { 0.0 } else { t as f64 / (t + f_placed) as f64 },
        achieved_recall: if a == 0 { 0.0 } else { t as f64 / a as f64 },
    };
    Ok((seqs, stats))
}

/// The inference-time pipeline applied to training data.
pub fn deterministic_train_insertion(corpus: &Corpus, kg: &DomainKG) -> Result<Vec<EnrichedSequence>> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| insert_pivots(s, &plan_injections(i, s, kg)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotPr {
    pub precision: f64,
    pub recall: f64,
    /// No pivot was inserted; precision is reported as 0.
    pub no_pivots: bool,
    /// The corpus has no aspect tokens; recall is reported as 0.
    pub no_aspects: bool,
}

/// Token-level precision/recall of deterministic pivots against gold aspects.
pub fn measure_pivot_pr(corpus: &Corpus, kg: &DomainKG) -> Result<PivotPr> {
    if !corpus.is_labeled() {
        return Err(Error::Invalid("pivot precision/recall needs a labeled corpus".into()));
    }
    let seqs = deterministic_train_insertion(corpus, kg)?;
    let PivotCounts { pivoted_tokens, true_tokens, aspect_tokens, .. } = pivot_counts(&seqs)?;
    Ok(PivotPr {
        precision: if pivoted_tokens == 0 { 0.0 } else { true_tokens as f64 / pivoted_tokens as f64 },
        recall: if aspect_tokens == 0 { 0.0 } else { true_tokens as f64 / aspect_tokens as f64 },
        no_pivots: pivoted_tokens == 0,
        no_aspects: aspect_tokens == 0,
    })
}

/// Corpus TSV with a sixth `PIVOT` column (`-`, `B` or `I`) marking the pivot
/// that follows each token.
pub fn enriched_to_tsv(corpus: &Corpus, seqs: &[EnrichedSequence]) -> Result<String> {
    if corpus.len() != seqs.len() {
        return Err(Error::Shape(format!("{} sentences, {} enriched sequences", corpus.len(), seqs.len())));
    }
    let mut out = String::new();
    for (k, (sentence, seq)) in corpus.sentences.iter().zip(seqs).enumerate() {
        let (tokens, flags) = strip_pivots(seq)?;
        if tokens != sentence.tokens {
            return Err(Error::Invalid(format!("enriched sequence {k} does not match its sentence")));
        }
        let cols: Vec<&str> = flags
            .iter()
            .map(|f| match f {
                None => "-",
                Some(PivotKind::B) => "B",
                Some(PivotKind::I) => "I",
            })
            .collect();
        if k > 0 {
            out.push('\n');
        }
        write_sentence_rows(&mut out, sentence, Some(&cols));
    }
    Ok(out)
}

pub fn enriched_from_tsv(text: &str, domain_id: &str, origin: &str) -> Result<(Corpus, Vec<EnrichedSequence>)> {
    let mut sentences = Vec::new();
    let mut seqs = Vec::new();
    for block in tsv_blocks(text) {
        let mut flags = Vec::with_capacity(block.len());
        for (line, cols) in &block {
            if cols.len() != 6 {
                return Err(Error::parse(origin, *line, format!("expected 6 columns, found {}", cols.len())));
            }
            flags.push(match cols[5] {
                "-" => None,
                "B" => Some(PivotKind::B),
                "I" => Some(PivotKind::I),
                other => return Err(Error::parse(origin, *line, format!("bad pivot `{other}`"))),
            });
        }
        let sentence = sentence_from_rows(origin, &block)?;
        let seq = EnrichedSequence::from_flags(&sentence, &flags).map_err(|e| Error::parse(origin, block[0].0, e.to_string()))?;
        sentences.push(sentence);
        seqs.push(seq);
    }
    Ok((Corpus::new(domain_id, sentences)?, seqs))
}

use crate::annotate::InjectionPlan;
use crate::corpus::{BioLabel, Corpus, TaggedSentence};
use crate::error::{Error, Result};
use crate::inject::{insert_pivots, EnrichedSequence};

/// One model input: surface tokens, indicator flags, per-position training
/// targets and the map back to original token positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub flags: Vec<bool>,
    /// `None` positions are excluded from the loss.
    pub targets: Vec<Option<BioLabel>>,
    pub origin: Vec<Option<usize>>,
    /// Length of the source sentence.
    pub original_len: usize,
}

/// How knowledge reaches the encoder at inference time.
#[derive(Debug, Clone, Copy)]
pub enum Injection<'a> {
    None,
    /// Pivot tokens after matched spans.
    Pivot(&'a [InjectionPlan]),
    /// Indicator flags on matched spans.
    Indicator(&'a [InjectionPlan]),
}

impl Example {
    pub fn plain(sentence: &TaggedSentence) -> Self {
        let n = sentence.len();
        Example {
            tokens: sentence.tokens.clone(),
            flags: vec![false; n],
            targets: targets_of(sentence.labels.as_deref(), n),
            origin: (0..n).map(Some).collect(),
            original_len: n,
        }
    }

    /// Pivot positions get target `N` when `pivot_loss` is set, otherwise
    /// they are ignored.
    pub fn enriched(seq: &EnrichedSequence, pivot_loss: bool) -> Self {
        let targets = match &seq.labels {
            Some(labels) => labels
                .iter()
                .zip(&seq.origin)
                .map(|(l, o)| (o.is_some() || pivot_loss).then_some(*l))
                .collect(),
            None => vec![None; seq.len()],
        };
        Example {
            tokens: seq.tokens.clone(),
            flags: vec![false; seq.len()],
            targets,
            origin: seq.origin.clone(),
            original_len: seq.origin.iter().flatten().count(),
        }
    }

    /// Plain tokens with the given candidate flags.
    pub fn indicator(sentence: &TaggedSentence, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != sentence.len() {
            return Err(Error::Shape(format!("{} flags for {} tokens", flags.len(), sentence.len())));
        }
        Ok(Example { flags, ..Self::plain(sentence) })
    }

    /// Flags every original token that carries a pivot in `seq`.
    pub fn indicator_from_enriched(sentence: &TaggedSentence, seq: &EnrichedSequence) -> Result<Self> {
        let mut flags = vec![false; sentence.len()];
        for k in 1..seq.len() {
            if seq.pivot_kinds[k].is_some() {
                if let Some(o) = seq.origin[k - 1] {
                    flags[o] = true;
                }
            }
        }
        Self::indicator(sentence, flags)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Drops positions past `max_len`.
    pub fn truncated(&self, max_len: usize) -> Example {
        if self.len() <= max_len {
            return self.clone();
        }
        Example {
            tokens: self.tokens[..max_len].to_vec(),
            flags: self.flags[..max_len].to_vec(),
            targets: self.targets[..max_len].to_vec(),
            origin: self.origin[..max_len].to_vec(),
            original_len: self.original_len,
        }
    }

    /// Gold labels at original positions, if every original token has one.
    pub fn gold(&self) -> Option<Vec<BioLabel>> {
        let mut out = vec![None; self.original_len];
        for (o, t) in self.origin.iter().zip(&self.targets) {
            if let Some(o) = o {
                out[*o] = *t;
            }
        }
        out.into_iter().collect()
    }
}

fn targets_of(labels: Option<&[BioLabel]>, n: usize) -> Vec<Option<BioLabel>> {
    match labels {
        Some(l) => l.iter().copied().map(Some).collect(),
        None => vec![None; n],
    }
}

/// Tokens covered by a matched span.
pub fn candidate_flags(sentence: &TaggedSentence, plan: &InjectionPlan) -> Vec<bool> {
    let mut flags = vec![false; sentence.len()];
    for m in &plan.matches {
        for f in flags.iter_mut().take(m.span.end).skip(m.span.start) {
            *f = true;
        }
    }
    flags
}

/// Inference inputs for `corpus` under `injection`.
pub fn build_examples(corpus: &Corpus, injection: Injection<'_>) -> Result<Vec<Example>> {
    let plans = match injection {
        Injection::None => return Ok(corpus.sentences.iter().map(Example::plain).collect()),
        Injection::Pivot(p) | Injection::Indicator(p) => p,
    };
    if plans.len() != corpus.len() {
        return Err(Error::Shape(format!("{} plans for {} sentences", plans.len(), corpus.len())));
    }
    corpus
        .sentences
        .iter()
        .zip(plans)
        .map(|(s, plan)| match injection {
            Injection::Pivot(_) => Ok(Example::enriched(&insert_pivots(s, plan)?, false)),
            _ => {
                plan.validate(s.len())?;
                Example::indicator(s, candidate_flags(s, plan))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inject::PivotKind;

    fn sentence() -> TaggedSentence {
        let labels = vec![BioLabel::N, BioLabel::BA, BioLabel::IA, BioLabel::N];
        TaggedSentence::new(
            ["i", "pad", "thai", "ok"].map(String::from).to_vec(),
            ["PRON", "NOUN", "NOUN", "ADJ"].map(String::from).to_vec(),
            vec![3, 2, 3, 3],
            ["nsubj", "compound", "nsubj", "root"].map(String::from).to_vec(),
            Some(labels),
        )
        .unwrap()
    }

    #[test]
    fn enriched_targets_skip_pivots() {
        let s = sentence();
        let seq = EnrichedSequence::from_flags(&s, &[None, Some(PivotKind::B), Some(PivotKind::I), None]).unwrap();
        let ex = Example::enriched(&seq, false);
        assert_eq!(ex.len(), 6);
        assert_eq!(ex.targets[2], None);
        assert_eq!(ex.gold().unwrap(), s.labels.clone().unwrap());
        assert_eq!(Example::enriched(&seq, true).targets[2], Some(BioLabel::N));
        let ind = Example::indicator_from_enriched(&s, &seq).unwrap();
        assert_eq!(ind.flags, vec![false, true, true, false]);
    }
}

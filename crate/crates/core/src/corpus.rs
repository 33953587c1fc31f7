//! Annotated corpora, the aspect/opinion label scheme, data partitions and
//! crowd-annotation merging.
//!
//! Corpus files hold one token per line with five tab-separated columns
//! (`TOKEN POS HEAD DEP BIO`); a blank line ends a sentence. `HEAD` is the
//! 0-based index of the dependency head, with the root pointing at itself.
//! `BIO` is one of `BA IA BO IO N`, or `-` for an unlabeled token.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::rng;

/// Per-token tag over aspects (`BA`, `IA`), opinions (`BO`, `IO`) and
/// everything else (`N`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BioLabel {
    BA,
    IA,
    BO,
    IO,
    N,
}

impl BioLabel {
    pub const ALL: [BioLabel; 5] = [BioLabel::BA, BioLabel::IA, BioLabel::BO, BioLabel::IO, BioLabel::N];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BioLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn is_aspect(self) -> bool {
        matches!(self, BioLabel::BA | BioLabel::IA)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BioLabel::BA => "BA",
            BioLabel::IA => "IA",
            BioLabel::BO => "BO",
            BioLabel::IO => "IO",
            BioLabel::N => "N",
        }
    }

    /// Whether `self` may directly follow `prev` (`None` = sentence start).
    pub fn may_follow(self, prev: Option<BioLabel>) -> bool {
        match self {
            BioLabel::IA => matches!(prev, Some(BioLabel::BA | BioLabel::IA)),
            BioLabel::IO => matches!(prev, Some(BioLabel::BO | BioLabel::IO)),
            _ => true,
        }
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BioLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BA" => Ok(BioLabel::BA),
            "IA" => Ok(BioLabel::IA),
            "BO" => Ok(BioLabel::BO),
            "IO" => Ok(BioLabel::IO),
            "N" => Ok(BioLabel::N),
            other => Err(Error::Invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, token: usize) -> bool {
        self.start <= token && token < self.end
    }
}

/// Maximal `BA IA*` runs. An `IA` that does not continue a run is ignored.
pub fn aspect_spans(labels: &[BioLabel]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &label) in labels.iter().enumerate() {
        match label {
            BioLabel::BA => {
                if let Some(start) = open.take() {
                    spans.push(Span::new(start, i));
                }
                open = Some(i);
            }
            BioLabel::IA if open.is_some() => {}
            _ => {
                if let Some(start) = open.take() {
                    spans.push(Span::new(start, i));
                }
            }
        }
    }
    if let Some(start) = open {
        spans.push(Span::new(start, labels.len()));
    }
    spans
}

/// A sentence with its syntactic annotations and optional gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub dep_head: Vec<usize>,
    pub dep_label: Vec<String>,
    pub labels: Option<Vec<BioLabel>>,
}

impl TaggedSentence {
    pub fn new(
        tokens: Vec<String>,
        pos: Vec<String>,
        dep_head: Vec<usize>,
        dep_label: Vec<String>,
        labels: Option<Vec<BioLabel>>,
    ) -> Result<Self> {
        let sentence = TaggedSentence {
            tokens,
            pos,
            dep_head,
            dep_label,
            labels,
        };
        sentence.validate()?;
        Ok(sentence)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Invalid("sentence has no tokens".into()));
        }
        let labels_len = self.labels.as_ref().map_or(n, Vec::len);
        if self.pos.len() != n || self.dep_head.len() != n || self.dep_label.len() != n || labels_len != n {
            return Err(Error::Invalid("parallel annotation columns differ in length".into()));
        }
        if let Some(i) = self.dep_head.iter().position(|&h| h >= n) {
            return Err(Error::Invalid(format!("head index {} out of range at token {i}", self.dep_head[i])));
        }
        if let Some(labels) = &self.labels {
            if let Some(i) = first_illegal_transition(labels) {
                return Err(Error::Invalid(format!("illegal {} at token {i}", labels[i])));
            }
        }
        Ok(())
    }

    pub fn aspect_spans(&self) -> Vec<Span> {
        self.labels.as_deref().map(aspect_spans).unwrap_or_default()
    }
}

fn first_illegal_transition(labels: &[BioLabel]) -> Option<usize> {
    let mut prev = None;
    for (i, &label) in labels.iter().enumerate() {
        if !label.may_follow(prev) {
            return Some(i);
        }
        prev = Some(label);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub domain_id: String,
    pub sentences: Vec<TaggedSentence>,
}

impl Corpus {
    pub fn new(domain_id: impl Into<String>, sentences: Vec<TaggedSentence>) -> Result<Self> {
        let domain_id = domain_id.into();
        if domain_id.is_empty() {
            return Err(Error::Invalid("empty domain id".into()));
        }
        if sentences.is_empty() {
            return Err(Error::Invalid(format!("corpus `{domain_id}` has no sentences")));
        }
        Ok(Corpus { domain_id, sentences })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.sentences.iter().all(|s| s.labels.is_some())
    }

    /// New corpus holding the sentences at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Corpus> {
        let sentences = indices
            .iter()
            .map(|&i| {
                self.sentences
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Invalid(format!("sentence index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(self.domain_id.clone(), sentences)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, sentence) in self.sentences.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            write_sentence_rows(&mut out, sentence, None);
        }
        out
    }
}

pub(crate) fn write_sentence_rows(out: &mut String, sentence: &TaggedSentence, extra: Option<&[&str]>) {
    for i in 0..sentence.len() {
        let label = sentence.labels.as_ref().map_or("-", |l| l[i].as_str());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            sentence.tokens[i], sentence.pos[i], sentence.dep_head[i], sentence.dep_label[i], label
        ));
        if let Some(extra) = extra {
            out.push('\t');
            out.push_str(extra[i]);
        }
        out.push('\n');
    }
}

/// Splits TSV text into sentence blocks of `(line_number, columns)`.
pub(crate) fn tsv_blocks(text: &str) -> Vec<Vec<(usize, Vec<&str>)>> {
    let mut blocks = Vec::new();
    let mut current = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        current.push((i + 1, line.split('\t').collect()));
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

/// Builds one sentence from rows whose first five columns are corpus columns.
pub(crate) fn sentence_from_rows(origin: &str, rows: &[(usize, Vec<&str>)]) -> Result<TaggedSentence> {
    let n = rows.len();
    let mut tokens = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    let mut heads = Vec::with_capacity(n);
    let mut deps = Vec::with_capacity(n);
    let mut labels: Vec<Option<BioLabel>> = Vec::with_capacity(n);
    for (line, cols) in rows {
        let head: usize = cols[2]
            .parse()
            .map_err(|_| Error::parse(origin, *line, format!("bad head index `{}`", cols[2])))?;
        if head >= n {
            return Err(Error::parse(
                origin,
                *line,
                format!("head index {head} out of range for sentence of length {n}"),
            ));
        }
        let label = match cols[4] {
            "-" => None,
            s => Some(s.parse::<BioLabel>().map_err(|e| Error::parse(origin, *line, e.to_string()))?),
        };
        tokens.push(cols[0].to_string());
        pos.push(cols[1].to_string());
        heads.push(head);
        deps.push(cols[3].to_string());
        labels.push(label);
    }
    let labels = if labels.iter().all(Option::is_none) {
        None
    } else if labels.iter().all(Option::is_some) {
        let labels: Vec<BioLabel> = labels.into_iter().flatten().collect();
        if let Some(i) = first_illegal_transition(&labels) {
            return Err(Error::parse(
                origin,
                rows[i].0,
                format!("illegal transition to {} after {}", labels[i], if i == 0 { "sentence start".to_string() } else { labels[i - 1].to_string() }),
            ));
        }
        Some(labels)
    } else {
        return Err(Error::parse(origin, rows[0].0, "sentence mixes labeled and unlabeled tokens"));
    };
    Ok(TaggedSentence {
        tokens,
        pos,
        dep_head: heads,
        dep_label: deps,
        labels,
    })
}

pub fn parse_corpus(text: &str, domain_id: &str, origin: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    for block in tsv_blocks(text) {
        for (line, cols) in &block {
            if cols.len() != 5 {
                return Err(Error::parse(origin, *line, format!("expected 5 columns, found {}", cols.len())));
            }
        }
        sentences.push(sentence_from_rows(origin, &block)?);
    }
    if sentences.is_empty() {
        return Err(Error::parse(origin, 1, "no sentences"));
    }
    Corpus::new(domain_id, sentences)
}

/// Loads a corpus file; the domain id is the file stem.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = read_to_string(path)?;
    let domain = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "domain".to_string());
    parse_corpus(&text, &domain, &path.display().to_string())
}

/// One train/validation/test split, as sorted sentence indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSet {
    pub partitions: Vec<Partition>,
}

pub const NUM_PARTITIONS: usize = 3;

/// Three independently shuffled 3:1:1 train/validation/test splits.
pub fn make_partitions(corpus: &Corpus, seed: u64) -> Result<PartitionSet> {
    let n = corpus.len();
    if n < 5 {
        return Err(Error::Invalid(format!("{n} sentences cannot be split 3:1:1")));
    }
    let n_train = (n as f64 * 0.6).round() as usize;
    let n_val = (n as f64 * 0.2).round() as usize;
    let partitions = (0..NUM_PARTITIONS)
        .map(|p| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::substream(seed, rng::PARTITION_STREAM + p as u64));
            let mut train = order[..n_train].to_vec();
            let mut validation = order[n_train..n_train + n_val].to_vec();
            let mut test = order[n_train + n_val..].to_vec();
            train.sort_unstable();
            validation.sort_unstable();
            test.sort_unstable();
            Partition { train, validation, test }
        })
        .collect();
    Ok(PartitionSet { partitions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionKind {
    Aspect,
    Opinion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
    Conflict,
}

/// One worker's highlighted span in one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSelection {
    pub worker_id: String,
    pub sentence_id: usize,
    pub span: Span,
    pub kind: SelectionKind,
    pub polarity: Option<Polarity>,
}

/// Parses `WORKER SENTENCE START END KIND POLARITY` lines.
pub fn parse_selections(text: &str, origin: &str) -> Result<Vec<WorkerSelection>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let no = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::parse(origin, no, format!("expected 6 columns, found {}", cols.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(origin, no, format!("bad integer `{s}`")));
        let (sentence_id, start, end) = (num(cols[1])?, num(cols[2])?, num(cols[3])?);
        if start >= end {
            return Err(Error::parse(origin, no, format!("empty selection [{start}, {end})")));
        }
        let kind = match cols[4].to_ascii_lowercase().as_str() {
            "aspect" => SelectionKind::Aspect,
            "opinion" => SelectionKind::Opinion,
            other => return Err(Error::parse(origin, no, format!("unknown kind `{other}`"))),
        };
        let polarity = match cols[5].to_ascii_lowercase().as_str() {
            "-" => None,
            "positive" => Some(Polarity::Positive),
            "negative" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            "conflict" => Some(Polarity::Conflict),
            other => return Err(Error::parse(origin, no, format!("unknown polarity `{other}`"))),
        };
        out.push(WorkerSelection {
            worker_id: cols[0].to_string(),
            sentence_id,
            span: Span::new(start, end),
            kind,
            polarity,
        });
    }
    Ok(out)
}

/// Merges crowd selections for one sentence into gold spans.
///
/// Selections that share a token form one highlighted phrase. Within each
/// phrase the longest run of tokens covered by at least `quorum` distinct
/// workers is emitted (leftmost on ties). A new span that overlaps existing
/// gold spans replaces them only when strictly longer than all of them.
pub fn merge_crowd_annotations(
    sentence: &TaggedSentence,
    selections: &[WorkerSelection],
    existing: &[Span],
    quorum: usize,
    panel: usize,
) -> Result<Vec<Span>> {
    let n = sentence.len();
    if quorum == 0 || quorum > panel {
        return Err(Error::Invalid(format!("quorum {quorum} must be in 1..={panel}")));
    }
    for sel in selections {
        if sel.span.start >= sel.span.end || sel.span.end > n {
            return Err(Error::Invalid(format!(
                "selection [{}, {}) by `{}` outside sentence of length {n}",
                sel.span.start, sel.span.end, sel.worker_id
            )));
        }
    }
    let workers: BTreeSet<&str> = selections.iter().map(|s| s.worker_id.as_str()).collect();
    if workers.len() > panel {
        return Err(Error::Invalid(format!("{} workers exceed panel size {panel}", workers.len())));
    }
    let mut existing_sorted = existing.to_vec();
    existing_sorted.sort();
    if existing_sorted.windows(2).any(|w| w[0].overlaps(&w[1])) || existing_sorted.iter().any(|s| s.is_empty() || s.end > n) {
        return Err(Error::Invalid("existing gold spans overlap or exceed the sentence".into()));
    }

    // Distinct supporting workers per token.
    let mut support: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    for sel in selections {
        for s in &mut support[sel.span.start..sel.span.end] {
            s.insert(sel.worker_id.as_str());
        }
    }

    let mut emitted = Vec::new();
    for phrase in phrases(selections) {
        let mut best: Option<Span> = None;
        let mut run_start = None;
        for t in phrase.start..=phrase.end {
            let ok = support.get(t).is_some_and(|s| t < phrase.end && s.len() >= quorum);
            match (ok, run_start) {
                (true, None) => run_start = Some(t),
                (false, Some(s)) => {
                    let run = Span::new(s, t);
                    if best.is_none_or(|b| run.len() > b.len()) {
                        best = Some(run);
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        emitted.extend(best);
    }

    let mut result = existing_sorted;
    for span in emitted {
        let overlapping: Vec<usize> = (0..result.len()).filter(|&i| result[i].overlaps(&span)).collect();
        let longest = overlapping.iter().map(|&i| result[i].len()).max().unwrap_or(0);
        if span.len() > longest {
            for &i in overlapping.iter().rev() {
                result.remove(i);
            }
            result.push(span);
            result.sort();
        }
    }
    Ok(result)
}

/// Connected components of selections under token overlap.
fn phrases(selections: &[WorkerSelection]) -> Vec<Span> {
    let mut spans: Vec<Span> = selections.iter().map(|s| s.span).collect();
    spans.sort();
    let mut out: Vec<Span> = Vec::new();
    for span in spans {
        match out.last_mut() {
            Some(last) if span.start < last.end => last.end = last.end.max(span.end),
            _ => out.push(span),
        }
    }
    out
}

//! Span-level scoring, the KG-only baseline and corpus diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotate::plan_injections;
use crate::corpus::{aspect_spans, BioLabel, Corpus, Span};
use crate::error::{Error, Result};
use crate::inject::{insert_pivots, EnrichedSequence, PivotKind};
use crate::kg::DomainKG;
use crate::model::{build_examples, EncoderModel, Injection};
use crate::annotate::InjectionPlan;

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 unless both inputs are positive.
pub fn harmonic(p: f64, r: f64) -> f64 {
    if p > 0.0 && r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Counts {
    pub fn new(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        Counts {
            tp,
            predicted,
            gold,
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

/// Exact-match aspect scores. The headline `precision/recall/f1` are
/// span-level; `token` holds aspect-token diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub token: Counts,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const TSV_HEADER: &'static str = "tp\tpredicted\tgold\tprecision\trecall\tf1\ttoken_precision\ttoken_recall\ttoken_f1";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.tp,
            self.predicted,
            self.gold,
            self.precision,
            self.recall,
            self.f1,
            self.token.precision,
            self.token.recall,
            self.token.f1
        )
    }
}

/// Scores predicted aspect spans against gold; a span counts only with
/// identical boundaries in the same sentence.
pub fn exact_match_f1(pred: &[Vec<BioLabel>], gold: &[Vec<BioLabel>]) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!("{} predicted sentences for {} gold", pred.len(), gold.len())));
    }
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    let (mut ttp, mut tnp, mut tng) = (0, 0, 0);
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!("sentence {i}: {} predicted labels for {} gold", p.len(), g.len())));
        }
        let ps: BTreeSet<Span> = aspect_spans(p).into_iter().collect();
        let gs: BTreeSet<Span> = aspect_spans(g).into_iter().collect();
        tp += ps.intersection(&gs).count();
        np += ps.len();
        ng += gs.len();
        for (a, b) in p.iter().zip(g) {
            ttp += usize::from(a.is_aspect() && b.is_aspect());
            tnp += usize::from(a.is_aspect());
            tng += usize::from(b.is_aspect());
        }
    }
    let span = Counts::new(tp, np, ng);
    Ok(EvalReport {
        tp,
        predicted: np,
        gold: ng,
        precision: span.precision,
        recall: span.recall,
        f1: span.f1,
        token: Counts::new(ttp, tnp, tng),
    })
}

/// Pivot placement measured against gold aspects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotCounts {
    /// Maximal `B I*` pivot groups.
    pub pivot_spans: usize,
    /// Pivot groups whose tokens coincide with a gold aspect span.
    pub true_spans: usize,
    pub gold_spans: usize,
    /// Original tokens followed by a pivot.
    pub pivoted_tokens: usize,
    /// Pivoted tokens that are gold aspect tokens.
    pub true_tokens: usize,
    pub aspect_tokens: usize,
}

/// Counts pivots in labeled enriched sequences.
pub fn pivot_counts(seqs: &[EnrichedSequence]) -> Result<PivotCounts> {
    let mut c = PivotCounts::default();
    for seq in seqs {
        seq.validate()?;
        let labels = seq.labels.as_ref().ok_or_else(|| Error::Invalid("pivot counts need gold labels".into()))?;
        let mut original = Vec::new();
        let mut marks: Vec<Option<PivotKind>> = Vec::new();
        for (k, o) in seq.origin.iter().enumerate() {
            if o.is_some() {
                original.push(labels[k]);
                marks.push(seq.pivot_kinds.get(k + 1).copied().flatten());
            }
        }
        let gold: BTreeSet<Span> = aspect_spans(&original).into_iter().collect();
        c.gold_spans += gold.len();
        c.aspect_tokens += original.iter().filter(|l| l.is_aspect()).count();
        let mut open: Option<usize> = None;
        let mut groups = Vec::new();
        for (i, m) in marks.iter().enumerate() {
            match m {
                Some(PivotKind::B) => {
                    if let Some(s) = open.replace(i) {
                        groups.push(Span::new(s, i));
                    }
                }
                Some(PivotKind::I) if open.is_some() => {}
                _ => {
                    if let Some(s) = open.take() {
                        groups.push(Span::new(s, i));
                    }
                }
            }
            if m.is_some() {
                c.pivoted_tokens += 1;
                c.true_tokens += usize::from(original[i].is_aspect());
            }
        }
        if let Some(s) = open {
            groups.push(Span::new(s, marks.len()));
        }
        c.pivot_spans += groups.len();
        c.true_spans += groups.iter().filter(|g| gold.contains(g)).count();
    }
    Ok(c)
}

/// Tags every token followed by a `B` pivot as `BA` and by an `I` pivot as
/// `IA`; everything else is `N`.
pub fn kg_only_tagger(corpus: &Corpus, kg: &DomainKG) -> Result<Vec<Vec<BioLabel>>> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seq = insert_pivots(s, &plan_injections(i, s, kg))?;
            Ok(labels_from_pivots(&seq))
        })
        .collect()
}

fn labels_from_pivots(seq: &EnrichedSequence) -> Vec<BioLabel> {
    let mut out = Vec::new();
    for (k, o) in seq.origin.iter().enumerate() {
        if o.is_some() {
            out.push(match seq.pivot_kinds.get(k + 1).copied().flatten() {
                Some(PivotKind::B) => BioLabel::BA,
                Some(PivotKind::I) => BioLabel::IA,
                None => BioLabel::N,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectConsistency {
    pub cardinality: usize,
    pub consistency: f64,
    /// No token was ever labeled as an aspect; consistency is reported as 0.
    pub no_aspects: bool,
}

/// Size of the (lowercased) aspect token set and the mean fraction of each
/// aspect token's occurrences that carry an aspect label.
pub fn aspect_consistency(corpus: &Corpus) -> Result<AspectConsistency> {
    if !corpus.is_labeled() {
        return Err(Error::Invalid("aspect consistency needs a labeled corpus".into()));
    }
    let mut stats: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in &corpus.sentences {
        let labels = s.labels.as_deref().unwrap_or_default();
        for (tok, l) in s.tokens.iter().zip(labels) {
            let e = stats.entry(tok.to_lowercase()).or_default();
            e.0 += usize::from(l.is_aspect());
            e.1 += 1;
        }
    }
    let per: Vec<f64> = stats.values().filter(|(a, _)| *a > 0).map(|&(a, t)| a as f64 / t as f64).collect();
    Ok(AspectConsistency {
        cardinality: per.len(),
        consistency: if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 },
        no_aspects: per.is_empty(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainDiagnostics {
    pub kg_size: usize,
    pub aspect_cardinality: usize,
    pub aspect_consistency: f64,
}

pub fn domain_diagnostics(corpus: &Corpus, kg: &DomainKG) -> Result<DomainDiagnostics> {
    let c = aspect_consistency(corpus)?;
    Ok(DomainDiagnostics {
        kg_size: kg.node_count(),
        aspect_cardinality: c.cardinality,
        aspect_consistency: c.consistency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 - cosine similarity`.
    Cosine,
}

impl DistanceMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            DistanceMetric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Mean over `a` of the mean distance to its `k` nearest vectors in `b`.
/// `k` is clamped to `b.len()` with a warning.
pub fn k_closest_distance(a: &[Vec<f64>], b: &[Vec<f64>], k: usize, metric: DistanceMetric) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("K must be at least 1".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("both embedding sets must be non-empty".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::Shape("embedding dimensions differ".into()));
    }
    let k = if k > b.len() {
        log::warn!("K = {k} exceeds the {} available vectors; clamping", b.len());
        b.len()
    } else {
        k
    };
    let mut total = 0.0;
    let mut dists = Vec::with_capacity(b.len());
    for x in a {
        dists.clear();
        dists.extend(b.iter().map(|y| metric.distance(x, y)));
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        total += dists[..k].iter().sum::<f64>() / k as f64;
    }
    Ok(total / a.len() as f64)
}

/// Both directions of [`k_closest_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KClosest {
    pub a_to_b: f64,
    pub b_to_a: f64,
}

pub fn k_closest_both(a: &[Vec<f64>], b: &[Vec<f64>], k: usize, metric: DistanceMetric) -> Result<KClosest> {
    Ok(KClosest {
        a_to_b: k_closest_distance(a, b, k, metric)?,
        b_to_a: k_closest_distance(b, a, k, metric)?,
    })
}

/// Token frequency tables, most frequent first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTally {
    pub true_positives: Vec<(String, usize)>,
    pub false_negatives: Vec<(String, usize)>,
}

/// Counts gold aspect tokens (lowercased) that were predicted as an aspect
/// (TP) or not (FN).
pub fn tp_fn_tally(pred: &[Vec<BioLabel>], gold: &[Vec<BioLabel>], corpus: &Corpus) -> Result<TokenTally> {
    if pred.len() != corpus.len() || gold.len() != corpus.len() {
        return Err(Error::Shape("predictions, gold and corpus differ in size".into()));
    }
    let mut tp: BTreeMap<String, usize> = BTreeMap::new();
    let mut fn_: BTreeMap<String, usize> = BTreeMap::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if pred[i].len() != s.len() || gold[i].len() != s.len() {
            return Err(Error::Shape(format!("sentence {i} label length differs from tokens")));
        }
        for (j, tok) in s.tokens.iter().enumerate() {
            if gold[i][j].is_aspect() {
                let table = if pred[i][j].is_aspect() { &mut tp } else { &mut fn_ };
                *table.entry(tok.to_lowercase()).or_default() += 1;
            }
        }
    }
    let ranked = |m: BTreeMap<String, usize>| {
        let mut v: Vec<(String, usize)> = m.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    };
    Ok(TokenTally {
        true_positives: ranked(tp),
        false_negatives: ranked(fn_),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub domain: String,
    pub token: String,
    pub vector: Vec<f64>,
}

/// Final hidden states of every gold aspect token occurrence.
pub fn export_embeddings(model: &EncoderModel, corpus: &Corpus, plans: Option<&[InjectionPlan]>) -> Result<Vec<EmbeddingRow>> {
    let injection = match plans {
        Some(p) if model.config.mode == crate::model::AttentionMode::ModifiedDea => Injection::Indicator(p),
        Some(p) => Injection::Pivot(p),
        None => Injection::None,
    };
    let examples = build_examples(corpus, injection)?;
    let mut rows = Vec::new();
    for (s, ex) in corpus.sentences.iter().zip(&examples) {
        let labels = s.labels.as_ref().ok_or_else(|| Error::Invalid("embedding export needs gold labels".into()))?;
        let hidden = model.hidden_states(ex)?;
        for (j, l) in labels.iter().enumerate() {
            if let (true, Some(v)) = (l.is_aspect(), &hidden[j]) {
                rows.push(EmbeddingRow {
                    domain: corpus.domain_id.clone(),
                    token: s.tokens[j].clone(),
                    vector: v.clone(),
                });
            }
        }
    }
    Ok(rows)
}

/// `DIM W` header, then `DOMAIN\tTOKEN\tv1\t..\tvW` rows.
pub fn embeddings_to_text(rows: &[EmbeddingRow]) -> Result<String> {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut out = format!("DIM {dim}\n");
    for r in rows {
        if r.vector.len() != dim {
            return Err(Error::Shape("embedding rows differ in width".into()));
        }
        let _ = write!(out, "{}\t{}", r.domain, r.token);
        for v in &r.vector {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_embeddings(text: &str, origin: &str) -> Result<Vec<EmbeddingRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
    let dim: usize = header
        .strip_prefix("DIM ")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::parse(origin, 1, "header must be `DIM W`"))?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != dim + 2 {
            return Err(Error::parse(origin, i + 1, format!("expected {} columns, found {}", dim + 2, cols.len())));
        }
        let vector = cols[2..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(origin, i + 1, format!("bad value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            domain: cols[0].to_string(),
            token: cols[1].to_string(),
            vector,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use BioLabel::*;

    #[test]
    fn perfect_and_boundary_mismatch() {
        let gold = vec![vec![BA, N, BA, IA, N, BA]];
        let r = exact_match_f1(&gold, &gold).unwrap();
        assert_eq!((r.tp, r.precision, r.recall, r.f1), (3, 1.0, 1.0, 1.0));
        let g = vec![vec![N, N, BA, IA, N]];
        let p = vec![vec![N, N, BA, N, N]];
        let r = exact_match_f1(&p, &g).unwrap();
        assert_eq!(r.tp, 0);
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.token.tp, 1);
        assert!(exact_match_f1(&p, &[vec![N]]).is_err());
    }

    #[test]
    fn consistency_hand_count() {
        let text = "\
the\tDET\t1\tdet\tN
food\tNOUN\t1\troot\tBA

Food\tNOUN\t0\troot\tBA

food\tNOUN\t0\troot\tBA

food\tNOUN\t0\troot\tN
";
        let c = parse_corpus(text, "d", "t").unwrap();
        let r = aspect_consistency(&c).unwrap();
        assert_eq!(r.cardinality, 1);
        assert!((r.consistency - 0.75).abs() < 1e-12);
    }

    #[test]
    fn k_closest_closed_form() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![3.0, 4.0], vec![6.0, 8.0]];
        assert!((k_closest_distance(&a, &b, 2, DistanceMetric::Euclidean).unwrap() - 7.5).abs() < 1e-12);
        assert_eq!(k_closest_distance(&a, &a, 1, DistanceMetric::Euclidean).unwrap(), 0.0);
        assert!((k_closest_distance(&a, &b, 5, DistanceMetric::Euclidean).unwrap() - 7.5).abs() < 1e-12);
        assert!(k_closest_distance(&a, &[vec![1.0]], 1, DistanceMetric::Euclidean).is_err());
    }

    #[test]
    fn tally_edges() {
        let text = "food\tNOUN\t1\tnsubj\tBA\ngood\tADJ\t1\troot\tBO\n";
        let c = parse_corpus(text, "d", "t").unwrap();
        let gold = vec![vec![BA, BO]];
        let t = tp_fn_tally(&gold, &gold, &c).unwrap();
        assert!(t.false_negatives.is_empty());
        assert_eq!(t.true_positives, vec![("food".to_string(), 1)]);
        let t = tp_fn_tally(&[vec![N, N]], &gold, &c).unwrap();
        assert!(t.true_positives.is_empty());
        assert_eq!(t.false_negatives, vec![("food".to_string(), 1)]);
    }

    #[test]
    fn embedding_text_round_trip() {
        let rows = vec![
            EmbeddingRow { domain: "a".into(), token: "food".into(), vector: vec![0.1, -2.5e-7] },
            EmbeddingRow { domain: "b".into(), token: "disk".into(), vector: vec![1.0 / 3.0, 4.0] },
        ];
        let text = embeddings_to_text(&rows).unwrap();
        assert!(text.starts_with("DIM 2\n"));
        assert_eq!(parse_embeddings(&text, "t").unwrap(), rows);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}

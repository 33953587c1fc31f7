//! Independent reference implementations and random generators shared by
//! the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use kginject::annotate::{CandidateSpan, InjectionPlan, PlannedMatch};
use kginject::corpus::{BioLabel, Span, TaggedSentence, WorkerSelection};
use kginject::model::{LayerParams, Mat};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// A layer with every projection (and bias) drawn at random.
pub fn random_layer(rng: &mut ChaCha8Rng, w: usize) -> LayerParams {
    LayerParams {
        wq: random_mat(rng, w, w),
        bq: random_mat(rng, 1, w),
        wk: random_mat(rng, w, w),
        bk: random_mat(rng, 1, w),
        wv: random_mat(rng, w, w),
        bv: random_mat(rng, 1, w),
        wqp: Some(random_mat(rng, w, w)),
        wkp: Some(random_mat(rng, w, w)),
        wqm: Some(random_mat(rng, w, w)),
        wkm: Some(random_mat(rng, w, w)),
        wo: random_mat(rng, w, w),
        bo: Mat::zeros((1, w)),
        ln1_g: Mat::ones((1, w)),
        ln1_b: Mat::zeros((1, w)),
        w1: random_mat(rng, w, 4 * w),
        b1: Mat::zeros((1, 4 * w)),
        w2: random_mat(rng, 4 * w, w),
        b2: Mat::zeros((1, w)),
        ln2_g: Mat::ones((1, w)),
        ln2_b: Mat::zeros((1, w)),
    }
}

fn project(x: &Mat, w: &Mat, b: Option<&Mat>) -> Vec<Vec<f64>> {
    let (n, d_in) = x.dim();
    let d_out = w.ncols();
    let mut out = vec![vec![0.0; d_out]; n];
    for i in 0..n {
        for c in 0..d_out {
            let mut s = b.map_or(0.0, |b| b[[0, c]]);
            for k in 0..d_in {
                s += x[[i, k]] * w[[k, c]];
            }
            out[i][c] = s;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `delta(i, j) = clamp(i - j + k, 0, 2k - 1)`.
pub fn oracle_delta(i: usize, j: usize, k: usize) -> usize {
    let v = i as i64 - j as i64 + k as i64;
    v.clamp(0, 2 * k as i64 - 1) as usize
}

pub struct OracleAttention {
    /// `scores[h][i][j]`, unscaled.
    pub scores: Vec<Vec<Vec<f64>>>,
    /// `n x (heads * d)` concatenated head outputs.
    pub hidden: Vec<Vec<f64>>,
}

/// Scalar, loop-by-loop attention. `m` is the indicator sequence (one row
/// per token); when present the two indicator terms are added and the
/// scale becomes `sqrt(5d)`, otherwise `sqrt(3d)`.
pub fn oracle_attention(x: &Mat, layer: &LayerParams, rel: &Mat, m: Option<&Mat>, heads: usize, k_rel: usize) -> OracleAttention {
    let n = x.nrows();
    let w = x.ncols();
    let d = w / heads;
    let qc = project(x, &layer.wq, Some(&layer.bq));
    let kc = project(x, &layer.wk, Some(&layer.bk));
    let vc = project(x, &layer.wv, Some(&layer.bv));
    let qp = project(rel, layer.wqp.as_ref().unwrap(), None);
    let kp = project(rel, layer.wkp.as_ref().unwrap(), None);
    let (qm, km) = match m {
        Some(m) => (
            Some(project(m, layer.wqm.as_ref().unwrap(), None)),
            Some(project(m, layer.wkm.as_ref().unwrap(), None)),
        ),
        None => (None, None),
    };
    let terms = if m.is_some() { 5.0 } else { 3.0 };
    let scale = (terms * d as f64).sqrt();

    let mut scores = vec![vec![vec![0.0; n]; n]; heads];
    let mut hidden = vec![vec![0.0; w]; n];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        let sl = |v: &Vec<f64>| v[cols.clone()].to_vec();
        for i in 0..n {
            for j in 0..n {
                let mut a = dot(&sl(&qc[i]), &sl(&kc[j]));
                a += dot(&sl(&qc[i]), &sl(&kp[oracle_delta(i, j, k_rel)]));
                a += dot(&sl(&kc[j]), &sl(&qp[oracle_delta(j, i, k_rel)]));
                if let (Some(qm), Some(km)) = (&qm, &km) {
                    a += dot(&sl(&qc[i]), &sl(&km[j]));
                    a += dot(&sl(&qm[i]), &sl(&kc[j]));
                }
                scores[h][i][j] = a;
            }
            let mx = scores[h][i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores[h][i].iter().map(|a| ((a - mx) / scale).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                let mut s = 0.0;
                for j in 0..n {
                    s += e[j] / z * vc[j][c];
                }
                hidden[i][c] = s;
            }
        }
    }
    OracleAttention { scores, hidden }
}

/// A valid BIO sequence over all five labels.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<BioLabel> {
    let mut out = Vec::with_capacity(n);
    let mut prev: Option<BioLabel> = None;
    for _ in 0..n {
        let label = loop {
            let l = BioLabel::ALL[rng.gen_range(0..5)];
            if l.may_follow(prev) {
                break l;
            }
        };
        out.push(label);
        prev = Some(label);
    }
    out
}

const WORDS: &[&str] = &["food", "pad", "thai", "battery", "screen", "was", "the", "great", "staff", "menu", "it", "very"];
const TAGS: &[&str] = &["NOUN", "PROPN", "ADJ", "VERB", "DET", "ADV"];
const DEPS: &[&str] = &["nsubj", "obj", "amod", "compound", "det", "root"];

pub fn random_sentence(rng: &mut ChaCha8Rng, n: usize, labeled: bool) -> TaggedSentence {
    let tokens = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect();
    let pos = (0..n).map(|_| TAGS[rng.gen_range(0..TAGS.len())].to_string()).collect();
    let heads = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let deps = (0..n).map(|_| DEPS[rng.gen_range(0..DEPS.len())].to_string()).collect();
    let labels = labeled.then(|| random_labels(rng, n));
    TaggedSentence::new(tokens, pos, heads, deps, labels).unwrap()
}

/// Sorted, non-overlapping random spans over `n` tokens.
pub fn random_spans(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(density) {
            let len = rng.gen_range(1..=3).min(n - i);
            spans.push(Span::new(i, i + len));
            i += len + rng.gen_range(0..2);
        } else {
            i += 1;
        }
    }
    spans
}

pub fn plan_from_spans(sentence_index: usize, sentence: &TaggedSentence, spans: &[Span]) -> InjectionPlan {
    InjectionPlan {
        sentence_index,
        matches: spans
            .iter()
            .map(|s| {
                let phrase = sentence.tokens[s.start..s.end].join("_");
                PlannedMatch {
                    span: CandidateSpan { start: s.start, end: s.end, phrase: phrase.clone() },
                    matched_node: phrase,
                    match_start: s.start,
                }
            })
            .collect(),
    }
}

/// Aspect spans as `(start, end)` pairs: a `BA` followed by any `IA` run.
pub fn oracle_spans(labels: &[BioLabel]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..labels.len() {
        if labels[i] == BioLabel::BA {
            let mut j = i + 1;
            while j < labels.len() && labels[j] == BioLabel::IA {
                j += 1;
            }
            out.insert((i, j));
        }
    }
    out
}

/// `(tp, predicted, gold)` by comparing span sets.
pub fn oracle_span_counts(pred: &[Vec<BioLabel>], gold: &[Vec<BioLabel>]) -> (usize, usize, usize) {
    let mut p = BTreeSet::new();
    let mut g = BTreeSet::new();
    for (k, (ps, gs)) in pred.iter().zip(gold).enumerate() {
        p.extend(oracle_spans(ps).into_iter().map(|(a, b)| (k, a, b)));
        g.extend(oracle_spans(gs).into_iter().map(|(a, b)| (k, a, b)));
    }
    (p.intersection(&g).count(), p.len(), g.len())
}

/// Crowd merge by direct enumeration: group selections into overlap
/// components, take the longest all-quorum window in each (leftmost on
/// ties), then fold into the existing spans keeping the longer label.
pub fn oracle_crowd_merge(n: usize, selections: &[WorkerSelection], existing: &[Span], quorum: usize) -> Vec<Span> {
    let mut votes = vec![0usize; n];
    for t in 0..n {
        let workers: BTreeSet<&str> = selections
            .iter()
            .filter(|s| s.span.start <= t && t < s.span.end)
            .map(|s| s.worker_id.as_str())
            .collect();
        votes[t] = workers.len();
    }
    // union-find over selections
    let k = selections.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for a in 0..k {
        for b in 0..k {
            let (sa, sb) = (selections[a].span, selections[b].span);
            if sa.start < sb.end && sb.start < sa.end {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut hulls: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for a in 0..k {
        let r = find(&mut parent, a);
        let s = selections[a].span;
        let e = hulls.entry(r).or_insert((s.start, s.end));
        e.0 = e.0.min(s.start);
        e.1 = e.1.max(s.end);
    }
    let mut hull_list: Vec<(usize, usize)> = hulls.into_values().collect();
    hull_list.sort();

    let mut emitted = Vec::new();
    for (lo, hi) in hull_list {
        let mut best: Option<(usize, usize)> = None;
        for a in lo..hi {
            for b in a + 1..=hi {
                if (a..b).all(|t| votes[t] >= quorum) && best.is_none_or(|(x, y)| b - a > y - x) {
                    best = Some((a, b));
                }
            }
        }
        if let Some((a, b)) = best {
            emitted.push(Span::new(a, b));
        }
    }

    let mut result: Vec<Span> = existing.to_vec();
    for e in emitted {
        let overlapping: Vec<Span> = result.iter().copied().filter(|r| r.start < e.end && e.start < r.end).collect();
        if overlapping.iter().all(|r| e.len() > r.len()) {
            result.retain(|r| !(r.start < e.end && e.start < r.end));
            result.push(e);
        }
    }
    result.sort();
    result
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Retained nodes by enumerating every simple path of one or two edges from
/// the seed. A path survives when each non-seed node on it has relatedness
/// at least `threshold`; the node's hop is its shortest surviving path.
pub fn oracle_prune(
    edges: &[(usize, usize)],
    vectors: &BTreeMap<usize, Vec<f64>>,
    seed: usize,
    threshold: f64,
) -> BTreeMap<usize, usize> {
    let rel = |v: usize| -> f64 {
        match (vectors.get(&seed), vectors.get(&v)) {
            (Some(s), Some(x)) => cosine(s, x),
            _ => 0.0,
        }
    };
    let adjacent = |a: usize, b: usize| edges.iter().any(|&(x, y)| (x == a && y == b) || (x == b && y == a));
    let nodes: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let mut out = BTreeMap::new();
    out.insert(seed, 0);
    for &v in &nodes {
        if v == seed {
            continue;
        }
        if adjacent(seed, v) && rel(v) >= threshold {
            out.insert(v, 1);
            continue;
        }
        let two = nodes
            .iter()
            .any(|&a| a != seed && a != v && adjacent(seed, a) && adjacent(a, v) && rel(a).min(rel(v)) >= threshold);
        if two {
            out.insert(v, 2);
        }
    }
    out
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use kginject::corpus::{merge_crowd_annotations, BioLabel, Corpus, SelectionKind, Span, TaggedSentence, WorkerSelection};
use kginject::eval::{aspect_consistency, exact_match_f1, k_closest_distance, DistanceMetric};
use kginject::experiment::{run_experiment, ExperimentConfig, RunMode};
use kginject::inject::{insert_pivots, stochastic_train_insertion, strip_pivots, PivotKind, PivotPolicy};
use kginject::kg::{expand_and_prune, EmbeddingTable, KgConfig, Triple, TripleSource, TripleStore, RELATED_TO};
use kginject::model::attention::{attention_forward, AttentionShape};
use kginject::model::encoder::Batch;
use kginject::model::{
    disentangled_attention, gradient_check, modified_attention, AttentionMode, EncoderParams, Mat, ModelConfig, Vocab,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let words = ["w0", "w1", "w2", "w3"];
    let mut worst = 0.0f64;
    let mut names = Vec::new();
    // model width 8 (two heads of 4) and per-head width 8
    for head_dim in [4, 8] {
        let vocab = Vocab::build(words);
        let cfg = ModelConfig {
            head_dim,
            heads: 2,
            layers: 1,
            k_rel: 3,
            max_len: 4,
            ..ModelConfig::toy(vocab.clone(), AttentionMode::ModifiedDea)
        };
        let params = EncoderParams::init(&cfg, 11).map_err(|e| e.to_string())?;
        let ids: Vec<usize> = words.iter().map(|w| vocab.id(w)).collect();
        let batch = Batch::from_rows(&[(ids, vec![false, true, true, false], vec![Some(0), Some(1), Some(4), Some(2)])])
            .map_err(|e| e.to_string())?;
        let report = gradient_check(&cfg, &params, &batch, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
        names = report.tensors.iter().map(|t| t.name.clone()).collect();
        if !report.passed {
            let bad: Vec<String> = report
                .tensors
                .iter()
                .filter(|t| t.rel_error >= 1e-4)
                .map(|t| format!("{} {:.2e}", t.name, t.rel_error))
                .collect();
            return Err(format!("head_dim {head_dim}: {}", bad.join(", ")));
        }
    }
    for required in ["m_plus", "m_minus", "layers.0.wqm", "layers.0.wkm", "layers.0.wqp", "layers.0.wkp", "rel_pos"] {
        if !names.iter().any(|n| n == required) {
            return Err(format!("tensor {required} not checked"));
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(30),
        format!("max rel error {worst:.2e} over {} tensors, {:.2}s", names.len(), elapsed.as_secs_f64()),
        format!("took {:.1}s", elapsed.as_secs_f64()),
    )
}

fn random_instance(rng: &mut rand_chacha::ChaCha8Rng) -> (Mat, kginject::model::LayerParams, Mat, Vec<bool>, Mat, Mat, usize, usize) {
    let n = rng.gen_range(1..=4);
    let heads = rng.gen_range(1..=2);
    let d = rng.gen_range(1..=4);
    let k_rel = rng.gen_range(1..=3);
    let w = heads * d;
    let x = random_mat(rng, n, w);
    let layer = random_layer(rng, w);
    let rel = random_mat(rng, 2 * k_rel, w);
    let flags: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let mp = random_mat(rng, 1, w);
    let mm = random_mat(rng, 1, w);
    (x, layer, rel, flags, mp, mm, heads, k_rel)
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn attention_reduction() -> Outcome {
    let mut rng = rng(101);
    for draw in 0..100 {
        let (x, mut layer, rel, flags, mp, mm, heads, k_rel) = random_instance(&mut rng);
        let w = x.ncols();
        layer.wqm = Some(Mat::zeros((w, w)));
        layer.wkm = Some(Mat::zeros((w, w)));
        let mask = vec![true; x.nrows()];
        let base = disentangled_attention(&x, &layer, &rel, heads, k_rel, &mask).map_err(|e| e.to_string())?;
        let modi = modified_attention(&x, &layer, &rel, &flags, &mp, &mm, heads, k_rel, &mask).map_err(|e| e.to_string())?;
        for h in 0..heads {
            if base.scores[h] != modi.scores[h] {
                return Err(format!("draw {draw} head {h}: scores differ"));
            }
            for i in 0..x.nrows() {
                if argmax(base.weights[h].row(i)) != argmax(modi.weights[h].row(i)) {
                    return Err(format!("draw {draw} head {h} row {i}: argmax differs"));
                }
            }
        }
    }
    Ok("100 draws: scores identical, row argmax unchanged".into())
}

fn oracle_equivalence() -> Outcome {
    let mut rng = rng(202);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let (x, layer, rel, flags, mp, mm, heads, k_rel) = random_instance(&mut rng);
        let mask = vec![true; x.nrows()];
        let m = kginject::model::indicator_sequence(&flags, &mp, &mm);
        for (mode, m_opt) in [(AttentionMode::BaselineDea, None), (AttentionMode::ModifiedDea, Some(&m))] {
            let shape = AttentionShape { heads, head_dim: x.ncols() / heads, k_rel, mode };
            let got = attention_forward(&shape, &x, &layer, Some(&rel), m_opt, &mask).map_err(|e| e.to_string())?;
            let want = oracle_attention(&x, &layer, &rel, m_opt, heads, k_rel);
            for h in 0..heads {
                for i in 0..x.nrows() {
                    for j in 0..x.nrows() {
                        worst = worst.max((got.scores[h][[i, j]] - want.scores[h][i][j]).abs());
                    }
                }
            }
            for i in 0..x.nrows() {
                for c in 0..x.ncols() {
                    worst = worst.max((got.context[[i, c]] - want.hidden[i][c]).abs());
                }
            }
            if worst > 1e-10 {
                return Err(format!("draw {draw} {mode:?}: deviation {worst:.2e}"));
            }
        }
    }
    Ok(format!("100 draws x 2 modes, max deviation {worst:.2e}"))
}

fn kg_pruning_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(303);
    let cfg = KgConfig::default();
    let mut retained_total = 0;
    for g in 0..200 {
        let n = rng.gen_range(2..=50);
        let p = rng.gen_range(0.02..0.25);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(p) {
                    edges.push(if rng.gen_bool(0.5) { (a, b) } else { (b, a) });
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 1));
        }
        let mut vectors = BTreeMap::new();
        for v in 0..n {
            if v == 0 || rng.gen_bool(0.9) {
                let mut vec: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if vec.iter().all(|x| *x == 0.0) {
                    vec[0] = 1.0;
                }
                vectors.insert(v, vec);
            }
        }
        let name = |v: usize| format!("c{v}");
        let store = TripleStore::new(
            edges
                .iter()
                .map(|&(a, b)| Triple::new(&name(a), RELATED_TO, &name(b), TripleSource::Dump).unwrap())
                .collect(),
        );
        let table = EmbeddingTable::new(4, vectors.iter().map(|(&v, x)| (name(v), x.clone())).collect()).map_err(|e| e.to_string())?;
        let seed = rng.gen_range(0..n);
        let got: BTreeMap<String, usize> = expand_and_prune(&store, &name(seed), &table, &cfg)
            .nodes
            .into_iter()
            .map(|(k, (_, hop))| (k, hop))
            .collect();
        let connected = edges.iter().any(|&(a, b)| a == seed || b == seed);
        // a seed in neither the dump nor the table yields nothing
        let want: BTreeMap<String, usize> = if connected || vectors.contains_key(&seed) {
            oracle_prune(&edges, &vectors, seed, cfg.min_path_relatedness).into_iter().map(|(v, h)| (name(v), h)).collect()
        } else {
            BTreeMap::new()
        };
        if got != want {
            return Err(format!("graph {g}: {} retained vs oracle {}", got.len(), want.len()));
        }
        retained_total += got.len();
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(10),
        format!("200 graphs identical ({retained_total} retained nodes), {:.2}s", elapsed.as_secs_f64()),
        format!("took {:.1}s", elapsed.as_secs_f64()),
    )
}

fn single_token_corpus(spans: usize, seed: u64) -> Corpus {
    let mut rng = rng(seed);
    let mut sentences = Vec::new();
    let mut placed = 0;
    while placed < spans {
        let n = rng.gen_range(4..12);
        let mut labels = vec![BioLabel::N; n];
        for l in labels.iter_mut() {
            if placed < spans && rng.gen_bool(0.25) {
                *l = BioLabel::BA;
                placed += 1;
            }
        }
        let tokens = (0..n).map(|i| format!("t{i}")).collect();
        sentences.push(
            TaggedSentence::new(tokens, vec!["NOUN".into(); n], vec![0; n], vec!["dep".into(); n], Some(labels)).unwrap(),
        );
    }
    Corpus::new("calib", sentences).unwrap()
}

fn stochastic_calibration() -> Outcome {
    let corpus = single_token_corpus(10_000, 404);
    let policy = PivotPolicy { precision: 0.8, recall: 0.7, rng_seed: 9 };
    let (seqs, _) = stochastic_train_insertion(&corpus, &policy).map_err(|e| e.to_string())?;
    let (again, _) = stochastic_train_insertion(&corpus, &policy).map_err(|e| e.to_string())?;
    if seqs != again {
        return Err("same seed gave different enriched corpora".into());
    }
    // count directly from the enriched tokens
    let (mut pivoted, mut true_pivoted, mut aspects) = (0usize, 0usize, 0usize);
    for (seq, s) in seqs.iter().zip(&corpus.sentences) {
        let labels = s.labels.as_ref().unwrap();
        aspects += labels.iter().filter(|l| l.is_aspect()).count();
        let mut orig = 0usize;
        for k in 0..seq.tokens.len() {
            if seq.tokens[k] == "[DOMAIN-B]" || seq.tokens[k] == "[DOMAIN-I]" {
                pivoted += 1;
                true_pivoted += usize::from(labels[orig - 1].is_aspect());
            } else {
                orig += 1;
            }
        }
    }
    let p = true_pivoted as f64 / pivoted as f64;
    let r = true_pivoted as f64 / aspects as f64;
    check(
        (p - 0.8).abs() <= 0.02 && (r - 0.7).abs() <= 0.02,
        format!("precision {p:.4}, recall {r:.4} over {aspects} spans; deterministic"),
        format!("precision {p:.4}, recall {r:.4}"),
    )
}

fn pivot_round_trip() -> Outcome {
    let mut rng = rng(505);
    for k in 0..10_000 {
        let n = rng.gen_range(1..=20);
        let labeled = rng.gen_bool(0.5);
        let s = random_sentence(&mut rng, n, labeled);
        let spans = random_spans(&mut rng, n, 0.3);
        let plan = plan_from_spans(k, &s, &spans);
        let seq = insert_pivots(&s, &plan).map_err(|e| e.to_string())?;
        let (tokens, flags) = strip_pivots(&seq).map_err(|e| e.to_string())?;
        if tokens != s.tokens {
            return Err(format!("pair {k}: tokens changed"));
        }
        let mut want = vec![None; n];
        for sp in &spans {
            want[sp.start] = Some(PivotKind::B);
            for f in &mut want[sp.start + 1..sp.end] {
                *f = Some(PivotKind::I);
            }
        }
        if flags != want {
            return Err(format!("pair {k}: pivot flags changed"));
        }
    }
    let words: Vec<String> = "it was the best pad thai i 've ever had".split(' ').map(String::from).collect();
    let n = words.len();
    let s = TaggedSentence::new(words, vec!["X".into(); n], vec![0; n], vec!["dep".into(); n], None).unwrap();
    let seq = insert_pivots(&s, &plan_from_spans(0, &s, &[Span::new(4, 6)])).map_err(|e| e.to_string())?;
    let text = seq.tokens.join(" ");
    check(
        text == "it was the best pad [DOMAIN-B] thai [DOMAIN-I] i 've ever had",
        "10000 pairs restored; example sentence order exact".into(),
        format!("example produced `{text}`"),
    )
}

fn f1_oracle() -> Outcome {
    let mut rng = rng(606);
    for k in 0..1000 {
        let m = rng.gen_range(1..=5);
        let (mut pred, mut gold) = (Vec::new(), Vec::new());
        for _ in 0..m {
            let n = rng.gen_range(1..=12);
            gold.push(random_labels(&mut rng, n));
            // perturb some gold sequences to get partial agreement
            pred.push(if rng.gen_bool(0.4) { gold.last().unwrap().clone() } else { random_labels(&mut rng, n) });
        }
        let r = exact_match_f1(&pred, &gold).map_err(|e| e.to_string())?;
        let (tp, np, ng) = oracle_span_counts(&pred, &gold);
        let p = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
        let rc = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        if (r.tp, r.predicted, r.gold) != (tp, np, ng) || (r.f1 - f).abs() > 1e-12 {
            return Err(format!("pair {k}: got ({}, {}, {}) want ({tp}, {np}, {ng})", r.tp, r.predicted, r.gold));
        }
    }
    use BioLabel::*;
    let r = exact_match_f1(&[vec![BA, N, N]], &[vec![BA, IA, N]]).map_err(|e| e.to_string())?;
    check(r.tp == 0, "1000 pairs match; boundary mismatch scores 0 TP".into(), format!("boundary case tp {}", r.tp))
}

fn transfer_and_trend() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut cfg = match ExperimentConfig::load(&fixture("experiment.json")) {
        Ok(c) => c,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    cfg.modes = vec![RunMode::Plain, RunMode::Pivot];
    cfg.kg_sample = vec![10.0, 50.0, 100.0];
    cfg.out = None;
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let elapsed = start.elapsed();
    let plain = report.summary_row(RunMode::Plain, None);
    let full = report.summary_row(RunMode::Pivot, Some(100.0));
    let transfer = match (plain, full) {
        (Some(a), Some(b)) if a.runs == 9 && b.runs == 9 => check(
            b.mean_f1 > a.mean_f1 && elapsed < Duration::from_secs(600),
            format!(
                "pivot {:.2} ({:.2}) > plain {:.2} ({:.2}) over 9 runs, {:.1}s",
                100.0 * b.mean_f1,
                100.0 * b.std_f1,
                100.0 * a.mean_f1,
                100.0 * a.std_f1,
                elapsed.as_secs_f64()
            ),
            format!("pivot {:.4} vs plain {:.4}, {:.1}s", b.mean_f1, a.mean_f1, elapsed.as_secs_f64()),
        ),
        _ => Err("missing or failed runs".into()),
    };
    let rows: Vec<_> = [10.0, 50.0, 100.0].iter().map(|&s| report.summary_row(RunMode::Pivot, Some(s))).collect();
    let trend = if rows.iter().all(Option::is_some) {
        let rows: Vec<_> = rows.into_iter().flatten().collect();
        let text = rows
            .iter()
            .map(|r| format!("{}%: {:.2} ({:.2})", r.kg_sample.unwrap(), 100.0 * r.mean_f1, 100.0 * r.std_f1))
            .collect::<Vec<_>>()
            .join(", ");
        let ok = rows.windows(2).all(|w| {
            let pooled = ((w[0].std_f1.powi(2) + w[1].std_f1.powi(2)) / 2.0).sqrt();
            w[1].mean_f1 >= w[0].mean_f1 - pooled
        });
        check(ok, text.clone(), text)
    } else {
        Err("missing sample rows".into())
    };
    (transfer, trend)
}

fn sel(worker: usize, start: usize, end: usize) -> WorkerSelection {
    WorkerSelection {
        worker_id: format!("w{worker}"),
        sentence_id: 0,
        span: Span::new(start, end),
        kind: SelectionKind::Aspect,
        polarity: None,
    }
}

fn crowd_merge_oracle() -> Outcome {
    let mut rng = rng(707);
    for k in 0..500 {
        let n = rng.gen_range(1..=20);
        let s = random_sentence(&mut rng, n, false);
        let mut selections = Vec::new();
        for w in 0..5 {
            for _ in 0..rng.gen_range(0..=2) {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(a + 1..=n.min(a + 6));
                selections.push(sel(w, a, b));
            }
        }
        let existing = if rng.gen_bool(0.5) { random_spans(&mut rng, n, 0.2) } else { Vec::new() };
        let got = merge_crowd_annotations(&s, &selections, &existing, 3, 5).map_err(|e| e.to_string())?;
        let want = oracle_crowd_merge(n, &selections, &existing, 3);
        if got != want {
            return Err(format!("panel {k}: {got:?} vs oracle {want:?}"));
        }
    }
    let s = random_sentence(&mut rng, 6, false);
    let unanimous: Vec<_> = (0..5).map(|w| sel(w, 2, 4)).collect();
    let three = vec![sel(0, 1, 4), sel(1, 2, 4), sel(2, 2, 5)];
    let a = merge_crowd_annotations(&s, &unanimous, &[], 3, 5).map_err(|e| e.to_string())?;
    let b = merge_crowd_annotations(&s, &three, &[], 3, 5).map_err(|e| e.to_string())?;
    let c = merge_crowd_annotations(&s, &three, &[Span::new(2, 5)], 3, 5).map_err(|e| e.to_string())?;
    check(
        a == [Span::new(2, 4)] && b == [Span::new(2, 4)] && c == [Span::new(2, 5)],
        "500 panels match; unanimous, 3-of-5 and longer-existing examples exact".into(),
        format!("hand examples gave {a:?} {b:?} {c:?}"),
    )
}

fn diagnostics() -> Outcome {
    let d = k_closest_distance(&[vec![0.0, 0.0]], &[vec![3.0, 4.0], vec![6.0, 8.0]], 2, DistanceMetric::Euclidean)
        .map_err(|e| e.to_string())?;
    use BioLabel::*;
    let sent = |tokens: &[&str], labels: Vec<BioLabel>| {
        let n = tokens.len();
        TaggedSentence::new(
            tokens.iter().map(|t| t.to_string()).collect(),
            vec!["NOUN".into(); n],
            vec![0; n],
            vec!["dep".into(); n],
            Some(labels),
        )
        .unwrap()
    };
    let corpus = Corpus::new(
        "diag",
        vec![
            sent(&["food", "ok"], vec![BA, N]),
            sent(&["Food", "was", "fine"], vec![BA, N, N]),
            sent(&["the", "food"], vec![N, BA]),
            sent(&["food", "poisoning"], vec![N, N]),
        ],
    )
    .unwrap();
    let c = aspect_consistency(&corpus).map_err(|e| e.to_string())?;
    check(
        (d - 7.5).abs() <= 1e-9 && c.cardinality == 1 && (c.consistency - 0.75).abs() <= 1e-9,
        format!("k-closest {d}, consistency ({}, {})", c.cardinality, c.consistency),
        format!("k-closest {d}, consistency ({}, {})", c.cardinality, c.consistency),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient fidelity", gradient_fidelity()),
        ("attention reduction", attention_reduction()),
        ("attention oracle equivalence", oracle_equivalence()),
        ("graph pruning oracle", kg_pruning_oracle()),
        ("stochastic insertion calibration", stochastic_calibration()),
        ("pivot round trip", pivot_round_trip()),
        ("span F1 oracle", f1_oracle()),
    ];
    let (transfer, trend) = transfer_and_trend();
    results.push(("cross-domain transfer", transfer));
    results.push(("graph size trend", trend));
    results.push(("crowd merge oracle", crowd_merge_oracle()));
    results.push(("diagnostics", diagnostics()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

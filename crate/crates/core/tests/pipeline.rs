mod common;

use common::*;
use kginject::annotate::plan_corpus;
use kginject::corpus::{load_corpus, BioLabel, Corpus, TaggedSentence};
use kginject::eval::{exact_match_f1, kg_only_tagger};
use kginject::experiment::{run_with_inputs, ExperimentConfig, ExperimentInputs, RunMode};
use kginject::kg::{build_domain_kg, DomainKG, EmbeddingTable, FileGenerator, KgConfig, TripleGenerator, TripleStore};
use kginject::model::encoder::Batch;
use kginject::model::{
    build_examples, gradient_check, train, AttentionMode, EncoderModel, EncoderParams, Example, Injection, ModelConfig,
    TrainConfig, Vocab,
};
use kginject::synth::transfer_scenario;

fn fixture_kg() -> (DomainKG, String) {
    let corpus = load_corpus(&fixture("restaurants.tsv")).unwrap();
    let store = TripleStore::load(&fixture("triples.tsv")).unwrap();
    let emb = EmbeddingTable::load(&fixture("embeddings.txt")).unwrap();
    let generator = FileGenerator::load(&fixture("generator.tsv")).unwrap();
    let (kg, _) = build_domain_kg(&corpus, &store, &emb, Some(&generator as &dyn TripleGenerator), &KgConfig::default()).unwrap();
    let text = kg.to_json().unwrap();
    (kg, text)
}

#[test]
fn golden_graph_is_reproduced_byte_for_byte() {
    let golden = std::fs::read_to_string(fixture("restaurants_kg.json")).unwrap();
    let (kg, first) = fixture_kg();
    let (_, second) = fixture_kg();
    assert_eq!(first, second);
    assert_eq!(first.trim_end(), golden.trim_end());
    assert_eq!(DomainKG::from_json(&golden).unwrap(), kg);
}

#[test]
fn sampling_keeps_seeds_and_scales_node_count() {
    let (kg, _) = fixture_kg();
    let others = kg.node_count() - kg.seeds.len();
    for pct in [0.0, 10.0, 50.0, 100.0] {
        let s = kg.sample_nodes(pct, 3).unwrap();
        for seed in &kg.seeds {
            assert!(s.contains_concept(seed));
        }
        assert_eq!(s.node_count() - kg.seeds.len(), (others as f64 * pct / 100.0).round() as usize);
        assert!(s.edges.iter().all(|t| s.contains_concept(&t.head) && s.contains_concept(&t.tail)));
        assert_eq!(kg.sample_nodes(pct, 3).unwrap(), s);
    }
    assert_eq!(kg.sample_nodes(100.0, 9).unwrap(), kg);
    assert!(kg.sample_nodes(101.0, 0).is_err());
}

#[test]
fn pad_thai_is_tagged_by_graph_only_baseline() {
    let words = ["the", "pad", "thai", "was", "great"];
    let s = TaggedSentence::new(
        words.iter().map(|w| w.to_string()).collect(),
        ["DET", "NOUN", "NOUN", "AUX", "ADJ"].iter().map(|w| w.to_string()).collect(),
        vec![2, 2, 3, 3, 3],
        ["det", "compound", "nsubj", "root", "acomp"].iter().map(|w| w.to_string()).collect(),
        Some(vec![BioLabel::N, BioLabel::BA, BioLabel::IA, BioLabel::N, BioLabel::N]),
    )
    .unwrap();
    let corpus = Corpus::new("restaurants", vec![s]).unwrap();
    let (kg, _) = fixture_kg();
    assert!(kg.contains_concept("pad_thai"));
    let plans = plan_corpus(&corpus, &kg);
    assert_eq!(plans[0].matches.len(), 1);
    assert_eq!((plans[0].matches[0].span.start, plans[0].matches[0].span.end), (1, 3));
    let pred = kg_only_tagger(&corpus, &kg).unwrap();
    assert_eq!(pred[0], vec![BioLabel::N, BioLabel::BA, BioLabel::IA, BioLabel::N, BioLabel::N]);
    let gold = vec![corpus.sentences[0].labels.clone().unwrap()];
    assert_eq!(exact_match_f1(&pred, &gold).unwrap().f1, 1.0);
}

fn tiny_setup(mode: AttentionMode) -> (ModelConfig, Vec<Example>) {
    let corpus = load_corpus(&fixture("laptops.tsv")).unwrap();
    let subset = corpus.subset(&(0..40).collect::<Vec<_>>()).unwrap();
    let examples = build_examples(&subset, Injection::None).unwrap();
    let vocab = Vocab::build(examples.iter().flat_map(|e| e.tokens.iter().map(String::as_str)));
    let cfg = ModelConfig { head_dim: 8, layers: 1, ..ModelConfig::toy(vocab, mode) };
    (cfg, examples)
}

#[test]
fn training_lowers_loss_and_checkpoint_round_trips() {
    let (cfg, examples) = tiny_setup(AttentionMode::BaselineDea);
    let hp = TrainConfig { epochs: 4, lr: 3e-3, ..TrainConfig::toy(5) };
    let (model, report) = train(cfg, &examples, &[], &hp).unwrap();
    let last = *report.epoch_losses.last().unwrap();
    assert!(last < report.initial_loss, "{} -> {last}", report.initial_loss);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = EncoderModel::load(&path).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(back.predict(&examples).unwrap(), model.predict(&examples).unwrap());
}

#[test]
fn every_attention_mode_passes_gradient_check() {
    for mode in [AttentionMode::Plain, AttentionMode::BaselineDea, AttentionMode::ModifiedDea] {
        let vocab = Vocab::build(["a", "b", "c", "d", "e"]);
        let cfg = ModelConfig { head_dim: 3, heads: 2, layers: 2, k_rel: 2, max_len: 5, ..ModelConfig::toy(vocab.clone(), mode) };
        let params = EncoderParams::init(&cfg, 4).unwrap();
        let ids = |ws: &[&str]| ws.iter().map(|w| vocab.id(w)).collect::<Vec<_>>();
        let batch = Batch::from_rows(&[
            (ids(&["a", "b", "c", "d", "e"]), vec![true, false, false, true, false], vec![Some(0), Some(1), None, Some(4), Some(3)]),
            (ids(&["e", "a"]), vec![false, true], vec![Some(2), Some(0)]),
        ])
        .unwrap();
        let report = gradient_check(&cfg, &params, &batch, 1e-4).unwrap();
        assert!(report.passed, "{mode:?}: {:.3e}", report.max_rel_error);
    }
}

#[test]
fn experiment_is_independent_of_thread_count() {
    let sc = transfer_scenario(60, 5).unwrap();
    let inputs = ExperimentInputs {
        source: sc.source,
        target: sc.target,
        store: TripleStore::parse(&sc.triples, "mem").unwrap(),
        embeddings: EmbeddingTable::parse(&sc.embeddings, "mem").unwrap(),
        generator: Some(FileGenerator::parse(&sc.generator, "mem").unwrap()),
        target_kg: None,
    };
    let mut cfg = ExperimentConfig::new("s".into(), "t".into(), "x".into(), "e".into());
    cfg.modes = vec![RunMode::Plain, RunMode::Pivot, RunMode::ModifiedDea, RunMode::KgOnly];
    cfg.seeds = vec![1];
    cfg.kg_sample = vec![50.0, 100.0];
    cfg.train.epochs = 2;
    cfg.model.head_dim = 4;
    cfg.model.layers = 1;
    cfg.threads = 1;
    let (one, _, _) = run_with_inputs(&cfg, &inputs).unwrap();
    cfg.threads = 3;
    let (three, _, _) = run_with_inputs(&cfg, &inputs).unwrap();
    assert_eq!(one, three);
    assert!(!one.partial);
    // plain runs once per job; the graph-dependent modes once per sample
    assert_eq!(one.runs.len(), 3 * (1 + 3 * 2));
}

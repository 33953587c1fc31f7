//! Domain-specific knowledge graphs.
//!
//! A domain graph starts from the top TF-IDF noun phrases of a corpus (the
//! seeds), pulls in every concept within `max_hops` edges of a seed in the
//! triple dump, and keeps a node only when some path from the seed reaches it
//! without passing through a concept whose embedding relatedness to the seed
//! falls below `min_path_relatedness`. Generated completions are added last
//! and are not pruned.

mod embedding;
mod seeds;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use embedding::{path_min_relatedness, relatedness, EmbeddingTable};
pub use seeds::{phrase_scores, select_seed_terms, select_seed_terms_with};
pub use store::{normalize_concept, Triple, TripleSource, TripleStore};

use crate::corpus::Corpus;
use crate::error::{read_to_string, write_string, Error, Result};
use crate::rng;

pub const RELATED_TO: &str = "RelatedTo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgConfig {
    pub k_seeds: usize,
    pub max_hops: usize,
    pub min_path_relatedness: f64,
    pub generator_completions: usize,
}

impl Default for KgConfig {
    fn default() -> Self {
        KgConfig {
            k_seeds: 7,
            max_hops: 2,
            min_path_relatedness: 0.2,
            generator_completions: 100,
        }
    }
}

impl KgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_seeds == 0 || self.max_hops == 0 {
            return Err(Error::Config("k_seeds and max_hops must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.min_path_relatedness) {
            return Err(Error::Config("min_path_relatedness must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgNode {
    pub relatedness_by_seed: BTreeMap<String, f64>,
    pub hop: usize,
    pub source: TripleSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainKG {
    pub domain_id: String,
    pub config: KgConfig,
    pub seeds: Vec<String>,
    pub nodes: BTreeMap<String, KgNode>,
    pub edges: Vec<Triple>,
}

impl DomainKG {
    pub fn empty(domain_id: impl Into<String>, config: KgConfig) -> Self {
        DomainKG {
            domain_id: domain_id.into(),
            config,
            seeds: Vec::new(),
            nodes: BTreeMap::new(),
            edges: Vec::new(),
        }
    }

    pub fn contains_concept(&self, phrase: &str) -> bool {
        self.nodes.contains_key(phrase)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    /// Keeps all seeds plus `round(pct% of the rest)` non-seed nodes drawn
    /// uniformly with `seed`; edges are restricted to surviving nodes.
    pub fn sample_nodes(&self, pct: f64, seed: u64) -> Result<DomainKG> {
        if !(0.0..=100.0).contains(&pct) {
            return Err(Error::Config(format!("sample percentage {pct} outside [0, 100]")));
        }
        let seeds: BTreeSet<&str> = self.seeds.iter().map(String::as_str).collect();
        let mut others: Vec<&String> = self.nodes.keys().filter(|k| !seeds.contains(k.as_str())).collect();
        let keep = (others.len() as f64 * pct / 100.0).round() as usize;
        others.shuffle(&mut rng::substream(seed, rng::KG_SAMPLE_STREAM));
        let kept: BTreeSet<&str> = others[..keep].iter().map(|s| s.as_str()).chain(seeds.iter().copied()).collect();
        let nodes = self
            .nodes
            .iter()
            .filter(|(k, _)| kept.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|t| kept.contains(t.head.as_str()) && kept.contains(t.tail.as_str()))
            .cloned()
            .collect();
        Ok(DomainKG {
            domain_id: self.domain_id.clone(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            nodes,
            edges,
        })
    }
}

/// Result of expanding one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedExpansion {
    pub seed: String,
    /// Retained concept -> (relatedness to seed, hop).
    pub nodes: BTreeMap<String, (f64, usize)>,
    pub edges: Vec<Triple>,
    /// Distinct concepts examined during expansion, seed included.
    pub reached: usize,
    /// Set when the seed is in neither the dump nor the embedding table.
    pub seed_missing: bool,
}

/// Breadth-first expansion around `seed` with bottleneck pruning.
///
/// `best[v]` after layer `l` holds the widest bottleneck over walks of length
/// `l` ending at `v`, where a walk's width is the minimum relatedness to the
/// seed along it (the seed excluded). A node is retained at the first layer
/// where that width reaches the threshold.
pub fn expand_and_prune(store: &TripleStore, seed: &str, emb: &EmbeddingTable, cfg: &KgConfig) -> SeedExpansion {
    let seed_missing = !store.contains_node(seed) && emb.resolve(seed).is_none();
    if seed_missing {
        log::warn!("seed `{seed}` not found in triple dump or embeddings");
        return SeedExpansion {
            seed: seed.to_string(),
            nodes: BTreeMap::new(),
            edges: Vec::new(),
            reached: 0,
            seed_missing,
        };
    }
    let threshold = cfg.min_path_relatedness;
    let mut score_cache: BTreeMap<String, f64> = BTreeMap::new();
    let mut score = |node: &str| -> f64 {
        *score_cache
            .entry(node.to_string())
            .or_insert_with(|| emb.concept_relatedness(seed, node))
    };

    let mut nodes: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    nodes.insert(seed.to_string(), (1.0, 0));
    let mut reached: BTreeSet<String> = BTreeSet::from([seed.to_string()]);
    let mut layer: BTreeMap<String, f64> = BTreeMap::from([(seed.to_string(), f64::INFINITY)]);

    for hop in 1..=cfg.max_hops {
        let mut next: BTreeMap<String, f64> = BTreeMap::new();
        for (node, &width) in &layer {
            for nb in store.neighbors(node) {
                reached.insert(nb.to_string());
                if nb == seed {
                    continue;
                }
                let w = width.min(score(nb));
                let slot = next.entry(nb.to_string()).or_insert(f64::NEG_INFINITY);
                if w > *slot {
                    *slot = w;
                }
            }
        }
        for (node, &w) in &next {
            if w >= threshold && !nodes.contains_key(node) {
                nodes.insert(node.clone(), (score(node), hop));
            }
        }
        // Walks whose width is already below threshold can never qualify.
        layer = next.into_iter().filter(|(_, w)| *w >= threshold).collect();
    }

    let mut edges: Vec<Triple> = Vec::new();
    for (node, &(_, hop)) in &nodes {
        if hop >= cfg.max_hops {
            continue;
        }
        for t in store.incident(node) {
            if let Some(other) = t.other(node) {
                if nodes.contains_key(other) {
                    edges.push(t.clone());
                }
            }
        }
    }
    edges.sort();
    edges.dedup();

    SeedExpansion {
        seed: seed.to_string(),
        nodes,
        edges,
        reached: reached.len(),
        seed_missing,
    }
}

/// Supplies candidate tails for `(head, relation, ?)`.
pub trait TripleGenerator {
    fn complete(&self, head: &str, relation: &str, n: usize) -> Result<Vec<String>>;
}

/// Completions read from a `SEED\tTAIL` file; relations other than
/// `RelatedTo` get no completions.
#[derive(Debug, Clone, Default)]
pub struct FileGenerator {
    tails: BTreeMap<String, Vec<String>>,
}

impl FileGenerator {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut tails: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(Error::parse(origin, i + 1, format!("expected 2 columns, found {}", cols.len())));
            }
            let (seed, tail) = (normalize_concept(cols[0]), normalize_concept(cols[1]));
            if seed.is_empty() || tail.is_empty() {
                return Err(Error::parse(origin, i + 1, "empty seed or tail"));
            }
            tails.entry(seed).or_default().push(tail);
        }
        Ok(FileGenerator { tails })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }
}

impl TripleGenerator for FileGenerator {
    fn complete(&self, head: &str, relation: &str, n: usize) -> Result<Vec<String>> {
        if relation != RELATED_TO {
            return Ok(Vec::new());
        }
        Ok(self.tails.get(head).map(|t| t.iter().take(n).cloned().collect()).unwrap_or_default())
    }
}

/// Adds generated `(seed, RelatedTo, tail)` completions for tails not yet in
/// the graph. Returns the seeds whose generation failed.
pub fn augment_with_generator(
    kg: &mut DomainKG,
    generator: &dyn TripleGenerator,
    emb: Option<&EmbeddingTable>,
    cfg: &KgConfig,
) -> Vec<String> {
    let mut failed = Vec::new();
    for seed in kg.seeds.clone() {
        let tails = match generator.complete(&seed, RELATED_TO, cfg.generator_completions) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("generator failed for seed `{seed}`: {e}");
                failed.push(seed);
                continue;
            }
        };
        for tail in tails {
            let tail = normalize_concept(&tail);
            if tail.is_empty() || kg.nodes.contains_key(&tail) {
                continue;
            }
            let score = emb.map_or(0.0, |e| e.concept_relatedness(&seed, &tail));
            kg.nodes.insert(
                tail.clone(),
                KgNode {
                    relatedness_by_seed: BTreeMap::from([(seed.clone(), score)]),
                    hop: 1,
                    source: TripleSource::Generated,
                },
            );
            kg.edges.push(Triple {
                head: seed.clone(),
                relation: RELATED_TO.to_string(),
                tail,
                source: TripleSource::Generated,
            });
        }
    }
    kg.edges.sort();
    kg.edges.dedup();
    failed
}

/// Node counts at each construction stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub seeds: Vec<String>,
    pub raw_nodes: usize,
    pub pruned_nodes: usize,
    pub augmented_nodes: usize,
    pub missing_seeds: Vec<String>,
    pub generator_failures: Vec<String>,
}

/// Unions the per-seed expansions into one graph.
pub fn merge_expansions(domain_id: &str, cfg: &KgConfig, expansions: &[SeedExpansion]) -> DomainKG {
    let mut kg = DomainKG::empty(domain_id, cfg.clone());
    kg.seeds = expansions.iter().map(|e| e.seed.clone()).collect();
    for exp in expansions {
        for (concept, &(score, hop)) in &exp.nodes {
            let node = kg.nodes.entry(concept.clone()).or_insert_with(|| KgNode {
                relatedness_by_seed: BTreeMap::new(),
                hop,
                source: TripleSource::Dump,
            });
            node.hop = node.hop.min(hop);
            let slot = node.relatedness_by_seed.entry(exp.seed.clone()).or_insert(score);
            *slot = slot.max(score);
        }
        kg.edges.extend(exp.edges.iter().cloned());
    }
    kg.edges.sort();
    kg.edges.dedup();
    kg
}

pub fn build_domain_kg(
    corpus: &Corpus,
    store: &TripleStore,
    emb: &EmbeddingTable,
    generator: Option<&dyn TripleGenerator>,
    cfg: &KgConfig,
) -> Result<(DomainKG, BuildLog)> {
    cfg.validate()?;
    let seeds = select_seed_terms(corpus, cfg.k_seeds);
    let expansions: Vec<SeedExpansion> = seeds.iter().map(|s| expand_and_prune(store, s, emb, cfg)).collect();
    let mut log = BuildLog {
        seeds: seeds.clone(),
        raw_nodes: raw_reach(store, &expansions, cfg.max_hops),
        missing_seeds: expansions.iter().filter(|e| e.seed_missing).map(|e| e.seed.clone()).collect(),
        ..BuildLog::default()
    };
    let mut kg = merge_expansions(&corpus.domain_id, cfg, &expansions);
    log.pruned_nodes = kg.node_count();
    if let Some(generator) = generator {
        log.generator_failures = augment_with_generator(&mut kg, generator, Some(emb), cfg);
    }
    log.augmented_nodes = kg.node_count();
    Ok((kg, log))
}

fn raw_reach(store: &TripleStore, expansions: &[SeedExpansion], max_hops: usize) -> usize {
    let mut all: BTreeSet<String> = BTreeSet::new();
    for exp in expansions.iter().filter(|e| !e.seed_missing) {
        let mut frontier = vec![exp.seed.clone()];
        all.insert(exp.seed.clone());
        let mut seen: BTreeSet<String> = BTreeSet::from([exp.seed.clone()]);
        for _ in 0..max_hops {
            let mut next = Vec::new();
            for node in &frontier {
                for nb in store.neighbors(node) {
                    if seen.insert(nb.to_string()) {
                        next.push(nb.to_string());
                    }
                }
            }
            all.extend(next.iter().cloned());
            frontier = next;
        }
    }
    all.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[(&str, [f64; 2])]) -> EmbeddingTable {
        EmbeddingTable::new(2, rows.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()).unwrap()
    }

    /// Unit vector at cosine `r` from (1, 0).
    fn at(r: f64) -> [f64; 2] {
        [r, (1.0 - r * r).sqrt()]
    }

    fn store(edges: &[(&str, &str)]) -> TripleStore {
        TripleStore::new(edges.iter().map(|(h, t)| Triple::new(h, RELATED_TO, t, TripleSource::Dump).unwrap()).collect())
    }

    #[test]
    fn star_prunes_weak_neighbour() {
        let e = emb(&[("seed", at(1.0)), ("a", at(0.9)), ("b", at(0.1))]);
        let s = store(&[("seed", "a"), ("seed", "b")]);
        let exp = expand_and_prune(&s, "seed", &e, &KgConfig::default());
        assert_eq!(exp.nodes.keys().collect::<Vec<_>>(), vec!["a", "seed"]);
        assert_eq!(exp.nodes["a"].1, 1);
        assert_eq!(exp.edges.len(), 1);
        assert_eq!(exp.reached, 3);
    }

    #[test]
    fn chain_bottleneck_prunes_far_node() {
        let e = emb(&[("seed", at(1.0)), ("a", at(0.15)), ("c", at(0.95))]);
        let s = store(&[("seed", "a"), ("a", "c")]);
        let exp = expand_and_prune(&s, "seed", &e, &KgConfig::default());
        assert_eq!(exp.nodes.keys().collect::<Vec<_>>(), vec!["seed"]);
    }

    #[test]
    fn alternative_path_rescues_node() {
        let e = emb(&[("seed", at(1.0)), ("a", at(0.15)), ("b", at(0.5)), ("c", at(0.95))]);
        let s = store(&[("seed", "a"), ("a", "c"), ("seed", "b"), ("b", "c")]);
        let exp = expand_and_prune(&s, "seed", &e, &KgConfig::default());
        assert!(exp.nodes.contains_key("c"));
        assert_eq!(exp.nodes["c"].1, 2);
        assert!(!exp.nodes.contains_key("a"));
    }

    #[test]
    fn missing_seed_flags_warning() {
        let e = emb(&[("x", at(1.0))]);
        let exp = expand_and_prune(&store(&[("a", "b")]), "nowhere", &e, &KgConfig::default());
        assert!(exp.seed_missing);
        assert!(exp.nodes.is_empty());
    }

    #[test]
    fn generator_adds_only_novel_tails() {
        let mut kg = DomainKG::empty("d", KgConfig::default());
        kg.seeds = vec!["food".into()];
        kg.nodes.insert(
            "food".into(),
            KgNode { relatedness_by_seed: BTreeMap::from([("food".into(), 1.0)]), hop: 0, source: TripleSource::Dump },
        );
        let generator = FileGenerator::parse("food\tpasta\nfood\tfood\nfood\tpasta\n", "mem").unwrap();
        let failed = augment_with_generator(&mut kg, &generator, None, &KgConfig::default());
        assert!(failed.is_empty());
        assert_eq!(kg.node_count(), 2);
        assert_eq!(kg.nodes["pasta"].source, TripleSource::Generated);
        assert_eq!(kg.edges.len(), 1);
    }

    struct Failing;
    impl TripleGenerator for Failing {
        fn complete(&self, _: &str, _: &str, _: usize) -> Result<Vec<String>> {
            Err(Error::Invalid("offline".into()))
        }
    }

    #[test]
    fn generator_failure_is_recorded() {
        let mut kg = DomainKG::empty("d", KgConfig::default());
        kg.seeds = vec!["food".into()];
        assert_eq!(augment_with_generator(&mut kg, &Failing, None, &KgConfig::default()), vec!["food"]);
    }

    #[test]
    fn merge_keeps_both_seed_scores() {
        let e = emb(&[("s1", at(1.0)), ("s2", at(0.9)), ("x", at(0.8))]);
        let s = store(&[("s1", "x"), ("s2", "x")]);
        let cfg = KgConfig::default();
        let exps = vec![expand_and_prune(&s, "s1", &e, &cfg), expand_and_prune(&s, "s2", &e, &cfg)];
        let kg = merge_expansions("d", &cfg, &exps);
        assert_eq!(kg.nodes["x"].relatedness_by_seed.len(), 2);
        assert!(kg.contains_concept("s1"));
        assert!(!kg.contains_concept("y"));
        // each seed is reachable from the other in two hops
        assert_eq!(kg.nodes["s2"].hop, 0);
    }

    #[test]
    fn sampling_keeps_seeds() {
        let e = emb(&[("s", at(1.0)), ("a", at(0.9)), ("b", at(0.9)), ("c", at(0.9)), ("d", at(0.9))]);
        let st = store(&[("s", "a"), ("s", "b"), ("s", "c"), ("s", "d")]);
        let cfg = KgConfig::default();
        let kg = merge_expansions("d", &cfg, &[expand_and_prune(&st, "s", &e, &cfg)]);
        let half = kg.sample_nodes(50.0, 3).unwrap();
        assert_eq!(half.node_count(), 3);
        assert!(half.contains_concept("s"));
        assert_eq!(kg.sample_nodes(100.0, 3).unwrap(), kg);
        assert_eq!(half, kg.sample_nodes(50.0, 3).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let mut kg = DomainKG::empty("d", KgConfig::default());
        kg.seeds.push("food".into());
        kg.nodes.insert(
            "food".into(),
            KgNode { relatedness_by_seed: BTreeMap::from([("food".into(), 1.0)]), hop: 0, source: TripleSource::Dump },
        );
        let text = kg.to_json().unwrap();
        assert_eq!(DomainKG::from_json(&text).unwrap(), kg);
    }
}

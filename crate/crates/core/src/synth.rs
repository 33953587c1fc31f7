//! Synthetic two-domain review corpora with a matching triple dump,
//! concept embeddings and generator completions.
//!
//! Aspect vocabularies of the two domains are disjoint. Non-aspect nouns
//! ("distractors") fill the same syntactic slots with label `N` and never
//! appear in the dump, so the graph is the only signal separating them from
//! unseen aspects.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BioLabel, Corpus, TaggedSentence};
use crate::error::Result;
use crate::rng;

pub const EMBEDDING_DIM: usize = 16;

/// Vocabulary of one synthetic domain. Multi-word aspects are written with
/// spaces; a leading `~` marks an adjectival modifier (`~external hard
/// drive`), other modifiers are noun compounds.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub name: &'static str,
    /// The first `hubs` aspects are mentioned more often and anchor the graph.
    pub aspects: &'static [&'static str],
    pub hubs: usize,
    pub distractors: &'static [&'static str],
    pub opinions: &'static [&'static str],
    /// Index of the topic direction in embedding space.
    pub topic: usize,
}

pub const LAPTOPS: DomainSpec = DomainSpec {
    name: "laptops",
    aspects: &[
        "battery", "screen", "keyboard", "price", "performance", "trackpad", "speakers",
        "processor", "memory", "webcam", "charger", "fan", "hinge", "ports", "display",
        "graphics", "touchscreen", "battery life", "hard drive", "~external hard drive",
        "operating system", "power supply", "usb port", "~optical drive",
    ],
    hubs: 7,
    distractors: &[
        "brother", "office", "weekend", "store", "box", "friend", "trip", "morning", "cousin",
        "classroom", "uncle", "holiday", "desk", "bag", "train", "teacher",
    ],
    opinions: &["fast", "slow", "bright", "sturdy", "flimsy", "loud", "responsive", "heavy"],
    topic: 0,
};

pub const RESTAURANTS: DomainSpec = DomainSpec {
    name: "restaurants",
    aspects: &[
        "food", "service", "staff", "menu", "wine", "pizza", "sushi", "pasta", "dessert",
        "steak", "salad", "soup", "bread", "coffee", "waiter", "ambience", "portions",
        "noodles", "appetizer", "pad thai", "~fried rice", "spring rolls", "ice cream",
        "~happy hour",
    ],
    hubs: 7,
    distractors: &[
        "husband", "sister", "birthday", "car", "neighbor", "evening", "street", "phone",
        "wife", "daughter", "boss", "saturday", "umbrella", "coat", "dog", "parents",
    ],
    opinions: &["delicious", "bland", "friendly", "rude", "fresh", "cozy", "tasty", "greasy"],
    topic: 1,
};

const GENERIC_OPINIONS: &[&str] = &["great", "good", "bad", "terrible", "excellent", "awful"];
const NOISE_CONCEPTS: &[&str] = &[
    "building", "money", "city", "color", "machine", "paper", "animal", "music", "water",
    "time", "light", "tree", "road", "glass",
];
const RELATIONS: &[&str] = &["RelatedTo", "IsA", "PartOf", "AtLocation"];

#[derive(Debug, Default)]
struct Builder {
    tokens: Vec<String>,
    pos: Vec<String>,
    head: Vec<usize>,
    dep: Vec<String>,
    labels: Vec<BioLabel>,
}

impl Builder {
    fn word(&mut self, token: &str, pos: &str, dep: &str, label: BioLabel) -> usize {
        self.tokens.push(token.to_string());
        self.pos.push(pos.to_string());
        self.head.push(usize::MAX);
        self.dep.push(dep.to_string());
        self.labels.push(label);
        self.tokens.len() - 1
    }

    /// Adds a noun phrase and returns the index of its head word.
    fn phrase(&mut self, spec: &str, aspect: bool, dep: &str) -> usize {
        let adjectival = spec.starts_with('~');
        let words: Vec<&str> = spec.trim_start_matches('~').split(' ').collect();
        let start = self.tokens.len();
        let last = start + words.len() - 1;
        for (k, w) in words.iter().enumerate() {
            let label = match (aspect, k) {
                (false, _) => BioLabel::N,
                (true, 0) => BioLabel::BA,
                (true, _) => BioLabel::IA,
            };
            if k + 1 == words.len() {
                self.word(w, "NOUN", dep, label);
            } else if adjectival && k == 0 {
                let i = self.word(w, "ADJ", "amod", label);
                self.head[i] = last;
            } else {
                let i = self.word(w, "NOUN", "compound", label);
                self.head[i] = last;
            }
        }
        last
    }

    fn attach(&mut self, child: usize, head: usize) {
        self.head[child] = head;
    }

    fn finish(self) -> TaggedSentence {
        debug_assert!(self.head.iter().all(|&h| h < self.tokens.len()));
        TaggedSentence::new(self.tokens, self.pos, self.head, self.dep, Some(self.labels))
            .expect("templates produce valid sentences")
    }
}

fn pick_aspect(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> &'static str {
    let weights: Vec<usize> = (0..spec.aspects.len()).map(|i| if i < spec.hubs { 6 } else { 1 }).collect();
    let total: usize = weights.iter().sum();
    let mut r = rng.gen_range(0..total);
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return spec.aspects[i];
        }
        r -= w;
    }
    spec.aspects[spec.aspects.len() - 1]
}

fn pick_opinion(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> &'static str {
    if rng.gen_bool(0.5) {
        GENERIC_OPINIONS.choose(rng).copied().unwrap_or("good")
    } else {
        spec.opinions.choose(rng).copied().unwrap_or("good")
    }
}

fn sentence(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> TaggedSentence {
    use BioLabel::{BO, N};
    let mut b = Builder::default();
    let aspect = pick_aspect(spec, rng);
    let distractor = spec.distractors.choose(rng).copied().unwrap_or("friend");
    let o1 = pick_opinion(spec, rng);
    let o2 = pick_opinion(spec, rng);
    match rng.gen_range(0..20) {
        // the A was O
        0..=4 => {
            let d = b.word("the", "DET", "det", N);
            let a = b.phrase(aspect, true, "nsubj");
            let c = b.word("was", "AUX", "cop", N);
            let o = b.word(o1, "ADJ", "root", BO);
            b.attach(d, a);
            b.attach(a, o);
            b.attach(c, o);
            b.attach(o, o);
        }
        // i loved the A
        5..=7 => {
            let i = b.word("i", "PRON", "nsubj", N);
            let v = b.word("loved", "VERB", "root", N);
            let d = b.word("the", "DET", "det", N);
            let a = b.phrase(aspect, true, "obj");
            b.attach(i, v);
            b.attach(v, v);
            b.attach(d, a);
            b.attach(a, v);
        }
        // the A was O but the D was O
        8..=10 => {
            let d1 = b.word("the", "DET", "det", N);
            let a = b.phrase(aspect, true, "nsubj");
            let c1 = b.word("was", "AUX", "cop", N);
            let o = b.word(o1, "ADJ", "root", BO);
            let cc = b.word("but", "CCONJ", "cc", N);
            let d2 = b.word("the", "DET", "det", N);
            let x = b.phrase(distractor, false, "nsubj");
            let c2 = b.word("was", "AUX", "cop", N);
            let o2i = b.word(o2, "ADJ", "conj", N);
            for (c, h) in [(d1, a), (a, o), (c1, o), (o, o), (cc, o2i), (d2, x), (x, o2i), (c2, o2i), (o2i, o)] {
                b.attach(c, h);
            }
        }
        // my D said the A was O
        11..=12 => {
            let my = b.word("my", "PRON", "poss", N);
            let x = b.phrase(distractor, false, "nsubj");
            let v = b.word("said", "VERB", "root", N);
            let d = b.word("the", "DET", "det", N);
            let a = b.phrase(aspect, true, "nsubj");
            let c = b.word("was", "AUX", "cop", N);
            let o = b.word(o1, "ADJ", "ccomp", BO);
            for (c_, h) in [(my, x), (x, v), (v, v), (d, a), (a, o), (c, o), (o, v)] {
                b.attach(c_, h);
            }
        }
        // the D was O
        13..=14 => {
            let d = b.word("the", "DET", "det", N);
            let x = b.phrase(distractor, false, "nsubj");
            let c = b.word("was", "AUX", "cop", N);
            let o = b.word(o1, "ADJ", "root", N);
            for (c_, h) in [(d, x), (x, o), (c, o), (o, o)] {
                b.attach(c_, h);
            }
        }
        // O A and O A
        15..=17 => {
            let second = pick_aspect(spec, rng);
            let oa = b.word(o1, "ADJ", "amod", BO);
            let a = b.phrase(aspect, true, "root");
            let cc = b.word("and", "CCONJ", "cc", N);
            let ob = b.word(o2, "ADJ", "amod", BO);
            let a2 = b.phrase(second, true, "conj");
            for (c, h) in [(oa, a), (a, a), (cc, a2), (ob, a2), (a2, a)] {
                b.attach(c, h);
            }
        }
        // we went there with my D
        _ => {
            let we = b.word("we", "PRON", "nsubj", N);
            let v = b.word("went", "VERB", "root", N);
            let t = b.word("there", "ADV", "advmod", N);
            let w = b.word("with", "ADP", "case", N);
            let my = b.word("my", "PRON", "poss", N);
            let x = b.phrase(distractor, false, "obl");
            for (c, h) in [(we, v), (v, v), (t, v), (w, x), (my, x), (x, v)] {
                b.attach(c, h);
            }
        }
    }
    b.finish()
}

/// `n` labeled sentences for `spec`.
pub fn generate_corpus(spec: &DomainSpec, n: usize, seed: u64) -> Result<Corpus> {
    let mut rng = rng::substream(seed, rng::SYNTH_STREAM + spec.topic as u64);
    let sentences = (0..n).map(|_| sentence(spec, &mut rng)).collect();
    Corpus::new(spec.name, sentences)
}

fn concept(spec: &str) -> String {
    spec.trim_start_matches('~').replace(' ', "_")
}

/// How a non-hub aspect is linked into the dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Neighbour of a hub.
    Direct,
    /// Two hops from a hub through another aspect.
    TwoHop,
    /// Reachable only through an unrelated concept; pruned, but offered by
    /// the generator.
    Generated,
    /// Reachable only through an unrelated concept.
    Unreachable,
}

pub fn link_of(spec: &DomainSpec, aspect_index: usize) -> Option<Link> {
    if aspect_index < spec.hubs {
        return None;
    }
    Some(match (aspect_index - spec.hubs) % 8 {
        5 => Link::TwoHop,
        6 => Link::Generated,
        7 => Link::Unreachable,
        _ => Link::Direct,
    })
}

/// Triple dump rows (`HEAD\tREL\tTAIL`) for the given domains.
pub fn triple_dump(domains: &[&DomainSpec]) -> String {
    let mut out = String::new();
    let mut rel = 0usize;
    let mut next_rel = || {
        rel += 1;
        RELATIONS[rel % RELATIONS.len()]
    };
    for spec in domains {
        let hubs: Vec<String> = spec.aspects[..spec.hubs].iter().map(|a| concept(a)).collect();
        for (i, h) in hubs.iter().enumerate() {
            let _ = writeln!(out, "{h}\t{}\t{}", next_rel(), hubs[(i + 1) % hubs.len()]);
            for k in 0..2 {
                let noise = NOISE_CONCEPTS[(i * 2 + k + spec.topic * 5) % NOISE_CONCEPTS.len()];
                let _ = writeln!(out, "{h}\tRelatedTo\t{noise}");
            }
        }
        let mut last_direct: Option<String> = None;
        for (j, a) in spec.aspects.iter().enumerate().skip(spec.hubs) {
            let c = concept(a);
            let hub = &hubs[j % hubs.len()];
            match link_of(spec, j) {
                Some(Link::Direct) => {
                    let _ = writeln!(out, "{hub}\t{}\t{c}", next_rel());
                    last_direct = Some(c);
                }
                Some(Link::TwoHop) => {
                    let via = last_direct.clone().unwrap_or_else(|| hub.clone());
                    let _ = writeln!(out, "{via}\t{}\t{c}", next_rel());
                }
                Some(Link::Generated) | Some(Link::Unreachable) => {
                    let noise = NOISE_CONCEPTS[(j + spec.topic) % NOISE_CONCEPTS.len()];
                    let _ = writeln!(out, "{noise}\tRelatedTo\t{c}");
                }
                None => {}
            }
        }
    }
    out
}

/// Concept embeddings: aspects lie near their domain's topic direction,
/// unrelated concepts point away from every topic.
pub fn embeddings(domains: &[&DomainSpec], seed: u64) -> String {
    let mut rng = rng::substream(seed, rng::SYNTH_STREAM + 0x10);
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let noisy = |topic: Option<usize>, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..EMBEDDING_DIM)
            .map(|d| {
                let base = match topic {
                    Some(t) if t == d => 1.0,
                    Some(_) => 0.0,
                    None if d < 2 => -0.3,
                    None => 0.0,
                };
                base + 0.35 * rng.gen_range(-1.0..1.0)
            })
            .collect()
    };
    for spec in domains {
        for a in spec.aspects {
            rows.push((concept(a), noisy(Some(spec.topic), &mut rng)));
        }
    }
    for n in NOISE_CONCEPTS {
        rows.push((n.to_string(), noisy(None, &mut rng)));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = format!("{} {EMBEDDING_DIM}\n", rows.len());
    for (c, v) in rows {
        out.push_str(&c);
        for x in v {
            let _ = write!(out, " {x:.6}");
        }
        out.push('\n');
    }
    out
}

/// Generator completions (`SEED\tTAIL`) proposing the generator-linked
/// aspects plus one off-topic tail per hub.
pub fn generator_completions(domains: &[&DomainSpec]) -> String {
    let mut out = String::new();
    for spec in domains {
        for (i, h) in spec.aspects[..spec.hubs].iter().enumerate() {
            let _ = writeln!(out, "{}\tthing", concept(h));
            for (j, a) in spec.aspects.iter().enumerate() {
                if link_of(spec, j) == Some(Link::Generated) && j % spec.hubs == i {
                    let _ = writeln!(out, "{}\t{}", concept(h), concept(a));
                }
            }
        }
    }
    out
}

/// Everything the cross-domain transfer scenario needs.
#[derive(Debug, Clone)]
pub struct TransferScenario {
    pub source: Corpus,
    pub target: Corpus,
    pub triples: String,
    pub embeddings: String,
    pub generator: String,
}

pub fn transfer_scenario(sentences_per_domain: usize, seed: u64) -> Result<TransferScenario> {
    let domains = [&LAPTOPS, &RESTAURANTS];
    Ok(TransferScenario {
        source: generate_corpus(&LAPTOPS, sentences_per_domain, seed)?,
        target: generate_corpus(&RESTAURANTS, sentences_per_domain, seed)?,
        triples: triple_dump(&domains),
        embeddings: embeddings(&domains, seed),
        generator: generator_completions(&domains),
    })
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inject::{PIVOT_B, PIVOT_I};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const NUM_LABELS: usize = 5;

/// Which attention the encoder uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Content-to-content attention over content plus absolute position
    /// embeddings.
    Plain,
    /// Content and relative-position terms (c2c + c2p + p2c).
    BaselineDea,
    /// Relative-position attention plus candidate-indicator terms (c2m + m2c).
    ModifiedDea,
}

impl AttentionMode {
    /// Number of score terms summed into each attention logit.
    pub fn score_terms(self) -> usize {
        match self {
            AttentionMode::Plain => 1,
            AttentionMode::BaselineDea => 3,
            AttentionMode::ModifiedDea => 5,
        }
    }

    pub fn uses_relative(self) -> bool {
        !matches!(self, AttentionMode::Plain)
    }
}

/// Word-level vocabulary with reserved specials at fixed ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Vocab::from_words(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    pub const SPECIALS: [&'static str; 4] = [PAD, UNK, PIVOT_B, PIVOT_I];

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < Self::SPECIALS.len() || words[..4].iter().zip(Self::SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Invalid("vocabulary must start with the reserved specials".into()));
        }
        let index: BTreeMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(Error::Invalid("duplicate vocabulary entry".into()));
        }
        Ok(Vocab { words, index })
    }

    /// Specials followed by the sorted distinct lowercased training tokens.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: std::collections::BTreeSet<String> = tokens.into_iter().map(str::to_lowercase).collect();
        for s in Self::SPECIALS {
            set.remove(&s.to_lowercase());
            set.remove(s);
        }
        let words = Self::SPECIALS.iter().map(|s| s.to_string()).chain(set).collect();
        Self::from_words(words).expect("specials are unique")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK_ID)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Per-head hidden size.
    pub head_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab: Vocab,
    /// Maximum relative distance; relative buckets lie in `[0, 2 * k_rel)`.
    pub k_rel: usize,
    pub num_labels: usize,
    pub mode: AttentionMode,
    pub max_len: usize,
    /// Feed-forward width as a multiple of the model width.
    pub ffn_mult: usize,
}

impl ModelConfig {
    /// Toy preset: d = 16, 2 heads, 2 layers, k = 8.
    pub fn toy(vocab: Vocab, mode: AttentionMode) -> Self {
        ModelConfig {
            head_dim: 16,
            heads: 2,
            layers: 2,
            vocab,
            k_rel: 8,
            num_labels: NUM_LABELS,
            mode,
            max_len: 64,
            ffn_mult: 4,
        }
    }

    pub fn width(&self) -> usize {
        self.head_dim * self.heads
    }

    pub fn ffn_width(&self) -> usize {
        self.width() * self.ffn_mult
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.heads == 0 || self.layers == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.k_rel < 1 {
            return Err(Error::Config("k_rel must be at least 1".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if self.num_labels != NUM_LABELS {
            return Err(Error::Config(format!("num_labels must be {NUM_LABELS}")));
        }
        Ok(())
    }
}

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Probability of replacing a non-special training token with `[UNK]`.
    pub unk_dropout: f64,
    /// Train on pivot positions as `N` instead of masking them out.
    pub pivot_loss: bool,
}

impl TrainConfig {
    /// Defaults sized for the toy encoder.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            epochs: 10,
            weight_decay: 0.01,
            seed,
            patience: 3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            unk_dropout: 0.1,
            pivot_loss: false,
        }
    }

    /// Fine-tuning values used with pretrained encoders: lr 5e-5, batch 8,
    /// up to 10 epochs.
    pub fn full(seed: u64) -> Self {
        TrainConfig {
            lr: 5e-5,
            unk_dropout: 0.0,
            ..Self::toy(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(seed)),
            "full" => Ok(Self::full(seed)),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.lr < 0.0 || !(0.0..1.0).contains(&self.unk_dropout) {
            return Err(Error::Config("invalid training hyperparameters".into()));
        }
        Ok(())
    }
}

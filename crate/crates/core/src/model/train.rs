use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig, UNK_ID};
use super::data::Example;
use super::encoder::{batch_loss, batch_loss_and_grad, forward_sequence, Batch, Row};
use super::params::{EncoderParams, Mat};
use crate::corpus::BioLabel;
use crate::error::{Error, Result};
use crate::eval::exact_match_f1;
use crate::rng;

/// Number of reserved vocabulary ids never replaced by `[UNK]` dropout.
const RESERVED_IDS: usize = 4;

/// Encoder configuration together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub params: EncoderParams,
}

impl EncoderModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = EncoderParams::init(&config, seed)?;
        Ok(EncoderModel { config, params })
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.config.vocab.id(t)).collect()
    }

    /// Logits for one example, truncated to `max_len`.
    pub fn logits(&self, example: &Example) -> Result<Mat> {
        let ex = example.truncated(self.config.max_len);
        let ids = self.ids(&ex.tokens);
        let cache = forward_sequence(&self.config, &self.params, &ids, &ex.flags, &vec![true; ex.len()])?;
        Ok(cache.logits)
    }

    /// Final hidden states realigned to original positions; truncated or
    /// pivot positions are absent.
    pub fn hidden_states(&self, example: &Example) -> Result<Vec<Option<Vec<f64>>>> {
        let ex = example.truncated(self.config.max_len);
        let ids = self.ids(&ex.tokens);
        let cache = forward_sequence(&self.config, &self.params, &ids, &ex.flags, &vec![true; ex.len()])?;
        let mut out = vec![None; ex.original_len];
        for (k, o) in ex.origin.iter().enumerate() {
            if let Some(o) = o {
                out[*o] = Some(cache.hidden().row(k).to_vec());
            }
        }
        Ok(out)
    }

    /// Argmax labels at original positions. Pivots are dropped and tokens
    /// beyond `max_len` are tagged `N`.
    pub fn predict_example(&self, example: &Example) -> Result<Vec<BioLabel>> {
        let logits = self.logits(example)?;
        let mut out = vec![BioLabel::N; example.original_len];
        for (k, o) in example.origin.iter().take(logits.nrows()).enumerate() {
            if let Some(o) = o {
                let row = logits.row(k);
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                out[*o] = BioLabel::from_index(best).unwrap_or(BioLabel::N);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, examples: &[Example]) -> Result<Vec<Vec<BioLabel>>> {
        examples.iter().map(|e| self.predict_example(e)).collect()
    }
}

/// Aspect-span F1 of `model` on examples carrying gold labels.
pub fn validation_f1(model: &EncoderModel, examples: &[Example]) -> Result<f64> {
    let gold = examples
        .iter()
        .map(|e| e.gold().ok_or_else(|| Error::Invalid("validation example without gold labels".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(exact_match_f1(&model.predict(examples)?, &gold)?.f1)
}

#[derive(Debug, Clone)]
struct AdamW {
    m: EncoderParams,
    v: EncoderParams,
    step: i32,
}

impl AdamW {
    fn new(params: &EncoderParams) -> Self {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Decoupled weight decay, skipped for row-vector tensors (biases, norm
    /// parameters and indicator embeddings).
    fn update(&mut self, params: &mut EncoderParams, grads: &EncoderParams, hp: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - hp.beta1.powi(self.step);
        let c2 = 1.0 - hp.beta2.powi(self.step);
        let tensors = params.named_mut().into_iter().zip(grads.named()).zip(self.m.named_mut()).zip(self.v.named_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            let decay = if p.nrows() > 1 { hp.weight_decay } else { 0.0 };
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
                *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + hp.eps) + decay * *p;
                *p -= hp.lr * update;
            });
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean training loss (no dropout) after each epoch.
    pub epoch_losses: Vec<f64>,
    pub validation_f1: Vec<f64>,
    /// 1-based epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn to_rows(model: &EncoderModel, examples: &[&Example]) -> Vec<Row> {
    examples
        .iter()
        .map(|e| {
            let ex = e.truncated(model.config.max_len);
            let targets = ex.targets.iter().map(|t| t.map(BioLabel::index)).collect();
            (model.ids(&ex.tokens), ex.flags, targets)
        })
        .collect()
}

fn mean_loss(model: &EncoderModel, examples: &[Example], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = Batch::from_rows(&to_rows(model, &refs))?;
        let n = batch.label_mask.iter().filter(|&&m| m).count();
        if n == 0 {
            continue;
        }
        total += batch_loss(&batch, &model.params, &model.config)? * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::Invalid("training data has no labeled positions".into()));
    }
    Ok(total / count as f64)
}

/// Trains a freshly initialised encoder. With validation data the
/// parameters of the best validation epoch are returned and training stops
/// after `patience` epochs without improvement.
pub fn train(config: ModelConfig, train_set: &[Example], validation: &[Example], hp: &TrainConfig) -> Result<(EncoderModel, TrainReport)> {
    hp.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut model = EncoderModel::new(config, hp.seed)?;
    let mut report = TrainReport {
        initial_loss: mean_loss(&model, train_set, hp.batch_size)?,
        ..TrainReport::default()
    };
    let mut opt = AdamW::new(&model.params);
    let mut best: Option<(f64, EncoderParams)> = None;
    let mut since_best = 0;
    if !validation.is_empty() {
        best = Some((validation_f1(&model, validation)?, model.params.clone()));
    }

    for epoch in 0..hp.epochs {
        let mut rng = rng::substream(hp.seed, rng::SHUFFLE_STREAM + epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let refs: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut rows = to_rows(&model, &refs);
            if hp.unk_dropout > 0.0 {
                for (ids, _, _) in rows.iter_mut() {
                    for id in ids.iter_mut() {
                        if *id >= RESERVED_IDS && rng.gen::<f64>() < hp.unk_dropout {
                            *id = UNK_ID;
                        }
                    }
                }
            }
            let batch = Batch::from_rows(&rows)?;
            if !batch.label_mask.iter().any(|&m| m) {
                continue;
            }
            let (_, grads) = batch_loss_and_grad(&batch, &model.params, &model.config)?;
            opt.update(&mut model.params, &grads, hp);
        }
        report.epoch_losses.push(mean_loss(&model, train_set, hp.batch_size)?);
        log::debug!("epoch {} loss {:.5}", epoch + 1, report.epoch_losses[epoch]);

        if let Some((best_f1, best_params)) = best.as_mut() {
            let f1 = validation_f1(&model, validation)?;
            report.validation_f1.push(f1);
            if f1 > *best_f1 {
                *best_f1 = f1;
                *best_params = model.params.clone();
                report.best_epoch = epoch + 1;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= hp.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        } else {
            report.best_epoch = epoch + 1;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{AttentionMode, Vocab};

    fn example(tokens: &[&str], labels: &[BioLabel]) -> Example {
        Example {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            flags: vec![false; tokens.len()],
            targets: labels.iter().copied().map(Some).collect(),
            origin: (0..tokens.len()).map(Some).collect(),
            original_len: tokens.len(),
        }
    }

    fn data() -> (Vocab, Vec<Example>) {
        use BioLabel::*;
        let words = ["the", "food", "was", "good", "staff", "rude", "wine", "cheap"];
        let vocab = Vocab::build(words);
        let ex = (0..8)
            .map(|i| {
                let a = ["food", "staff", "wine"][i % 3];
                let o = ["good", "rude", "cheap"][i % 3];
                example(&["the", a, "was", o], &[N, BA, N, BO])
            })
            .collect();
        (vocab, ex)
    }

    #[test]
    fn zero_lr_keeps_params() {
        let (vocab, ex) = data();
        let cfg = ModelConfig::toy(vocab, AttentionMode::ModifiedDea);
        let hp = TrainConfig { lr: 0.0, epochs: 1, ..TrainConfig::toy(5) };
        let (model, _) = train(cfg.clone(), &ex, &[], &hp).unwrap();
        assert_eq!(model.params, EncoderParams::init(&cfg, 5).unwrap());
    }

    #[test]
    fn same_seed_same_weights() {
        let (vocab, ex) = data();
        let cfg = ModelConfig::toy(vocab, AttentionMode::BaselineDea);
        let hp = TrainConfig { epochs: 2, ..TrainConfig::toy(9) };
        let (a, _) = train(cfg.clone(), &ex, &ex, &hp).unwrap();
        let (b, _) = train(cfg, &ex, &ex, &hp).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_training_set() {
        let (vocab, _) = data();
        let cfg = ModelConfig::toy(vocab, AttentionMode::Plain);
        assert!(train(cfg, &[], &[], &TrainConfig::toy(1)).is_err());
    }
}

use ndarray::{Array2, Array3, Axis};

use super::attention::{attention_backward, attention_forward, indicator_sequence, AttentionCache, AttentionShape};
use super::config::{AttentionMode, ModelConfig, PAD_ID};
use super::params::{EncoderParams, Mat};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Mat, g: &Mat, b: &Mat) -> (Mat, NormCache) {
    let (n, w) = x.dim();
    let mut xhat = Mat::zeros((n, w));
    let mut inv_std = Vec::with_capacity(n);
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / w as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    let y = &xhat * g + b;
    (y, NormCache { xhat, inv_std })
}

/// Returns `dx` and accumulates gain/bias gradients.
fn layer_norm_backward(cache: &NormCache, dy: &Mat, g: &Mat, dg: &mut Mat, db: &mut Mat) -> Mat {
    let (n, w) = dy.dim();
    dg.scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
    db.scaled_add(1.0, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let dxhat = dy * g;
    let mut dx = Mat::zeros((n, w));
    for i in 0..n {
        let row = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_d = row.sum() / w as f64;
        let mean_dx = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / w as f64;
        for j in 0..w {
            dx[[i, j]] = cache.inv_std[i] * (row[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x.powi(3))).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x.powi(3))).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone)]
struct LayerCache {
    attn: AttentionCache,
    ln1: NormCache,
    x1: Mat,
    pre_act: Mat,
    act: Mat,
    ln2: NormCache,
}

/// Everything the backward pass needs for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    ids: Vec<usize>,
    flags: Vec<bool>,
    emb_ln: NormCache,
    layers: Vec<LayerCache>,
    last_hidden: Mat,
    pub logits: Mat,
}

impl SequenceCache {
    /// Final-layer hidden states, `n x width`.
    pub fn hidden(&self) -> &Mat {
        &self.last_hidden
    }
}

fn shape_of(cfg: &ModelConfig) -> AttentionShape {
    AttentionShape {
        heads: cfg.heads,
        head_dim: cfg.head_dim,
        k_rel: cfg.k_rel,
        mode: cfg.mode,
    }
}

/// Runs one (possibly padded) sequence. `key_mask[j]` is false for padding.
pub fn forward_sequence(
    cfg: &ModelConfig,
    params: &EncoderParams,
    ids: &[usize],
    flags: &[bool],
    key_mask: &[bool],
) -> Result<SequenceCache> {
    let n = ids.len();
    if n == 0 {
        return Err(Error::Shape("empty sequence".into()));
    }
    if n > cfg.max_len {
        return Err(Error::Shape(format!("sequence of {n} tokens exceeds max_len {}", cfg.max_len)));
    }
    if flags.len() != n || key_mask.len() != n {
        return Err(Error::Shape("flags or mask length differs from sequence".into()));
    }
    let vocab = params.tok_emb.nrows();
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::Shape(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let w = cfg.width();
    let mut emb = Mat::zeros((n, w));
    for (i, &id) in ids.iter().enumerate() {
        emb.row_mut(i).assign(&params.tok_emb.row(id));
        if let Some(abs) = &params.abs_pos {
            emb.row_mut(i).scaled_add(1.0, &abs.row(i));
        }
    }
    let (mut x, emb_ln) = layer_norm(&emb, &params.emb_ln_g, &params.emb_ln_b);

    let m_seq = match (cfg.mode, &params.m_plus, &params.m_minus) {
        (AttentionMode::ModifiedDea, Some(mp), Some(mm)) => Some(indicator_sequence(flags, mp, mm)),
        (AttentionMode::ModifiedDea, _, _) => return Err(Error::Shape("missing indicator embeddings".into())),
        _ => None,
    };
    let shape = shape_of(cfg);
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let attn = attention_forward(&shape, &x, layer, params.rel_pos.as_ref(), m_seq.as_ref(), key_mask)?;
        let attn_out = attn.context.dot(&layer.wo) + &layer.bo;
        let (x1, ln1) = layer_norm(&(&x + &attn_out), &layer.ln1_g, &layer.ln1_b);
        let pre_act = x1.dot(&layer.w1) + &layer.b1;
        let act = pre_act.mapv(gelu);
        let ff = act.dot(&layer.w2) + &layer.b2;
        let (x2, ln2) = layer_norm(&(&x1 + &ff), &layer.ln2_g, &layer.ln2_b);
        layers.push(LayerCache { attn, ln1, x1, pre_act, act, ln2 });
        x = x2;
    }
    let logits = x.dot(&params.head_w) + &params.head_b;
    Ok(SequenceCache {
        ids: ids.to_vec(),
        flags: flags.to_vec(),
        emb_ln,
        layers,
        last_hidden: x,
        logits,
    })
}

/// Accumulates `d loss / d params` into `grads` given `d loss / d logits`.
pub fn backward_sequence(
    cfg: &ModelConfig,
    params: &EncoderParams,
    cache: &SequenceCache,
    d_logits: &Mat,
    grads: &mut EncoderParams,
) {
    let shape = shape_of(cfg);
    grads.head_w.scaled_add(1.0, &cache.last_hidden.t().dot(d_logits));
    grads.head_b.scaled_add(1.0, &d_logits.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let mut dx = d_logits.dot(&params.head_w.t());
    let mut d_m_seq: Option<Mat> = None;

    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];
        let d_res2 = layer_norm_backward(&lc.ln2, &dx, &layer.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
        g.w2.scaled_add(1.0, &lc.act.t().dot(&d_res2));
        g.b2.scaled_add(1.0, &d_res2.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let d_act = d_res2.dot(&layer.w2.t());
        let mut d_pre = d_act;
        d_pre.zip_mut_with(&lc.pre_act, |d, &z| *d *= gelu_grad(z));
        g.w1.scaled_add(1.0, &lc.x1.t().dot(&d_pre));
        g.b1.scaled_add(1.0, &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let d_x1 = d_res2 + d_pre.dot(&layer.w1.t());

        let d_res1 = layer_norm_backward(&lc.ln1, &d_x1, &layer.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
        g.wo.scaled_add(1.0, &lc.attn.context.t().dot(&d_res1));
        g.bo.scaled_add(1.0, &d_res1.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let d_ctx = d_res1.dot(&layer.wo.t());
        let ag = attention_backward(&shape, &lc.attn, layer, &d_ctx, g);
        dx = d_res1 + ag.dx;
        if let (Some(d_rel), Some(gr)) = (ag.d_rel, grads.rel_pos.as_mut()) {
            gr.scaled_add(1.0, &d_rel);
        }
        if let Some(dm) = ag.d_m_seq {
            match d_m_seq.as_mut() {
                Some(acc) => acc.scaled_add(1.0, &dm),
                None => d_m_seq = Some(dm),
            }
        }
    }

    if let (Some(dm), Some(gp), Some(gm)) = (d_m_seq, grads.m_plus.as_mut(), grads.m_minus.as_mut()) {
        for (i, &flag) in cache.flags.iter().enumerate() {
            let target = if flag { &mut *gp } else { &mut *gm };
            target.row_mut(0).scaled_add(1.0, &dm.row(i));
        }
    }

    let d_emb = layer_norm_backward(&cache.emb_ln, &dx, &params.emb_ln_g, &mut grads.emb_ln_g, &mut grads.emb_ln_b);
    for (i, &id) in cache.ids.iter().enumerate() {
        grads.tok_emb.row_mut(id).scaled_add(1.0, &d_emb.row(i));
        if let Some(abs) = grads.abs_pos.as_mut() {
            abs.row_mut(i).scaled_add(1.0, &d_emb.row(i));
        }
    }
}

/// Sum of token cross-entropies over `targets` that are `Some`, with the
/// gradient of `sum / normalizer` with respect to the logits.
pub fn cross_entropy_sum(logits: &Mat, targets: &[Option<usize>], normalizer: f64) -> (f64, usize, Mat) {
    let mut total = 0.0;
    let mut count = 0;
    let mut d = Mat::zeros(logits.dim());
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[t];
        count += 1;
        for (j, v) in row.iter().enumerate() {
            d[[i, j]] = (v - log_z).exp() / normalizer;
        }
        d[[i, t]] -= 1.0 / normalizer;
    }
    (total, count, d)
}

/// Mean token cross-entropy over non-ignored positions.
pub fn loss(logits: &Mat, targets: &[Option<usize>]) -> Result<f64> {
    if logits.nrows() != targets.len() {
        return Err(Error::Shape(format!("{} logit rows for {} targets", logits.nrows(), targets.len())));
    }
    let (total, count, _) = cross_entropy_sum(logits, targets, 1.0);
    if count == 0 {
        return Err(Error::Invalid("every position is ignored".into()));
    }
    Ok(total / count as f64)
}

/// A padded batch. Masks are `true` for real (non-pad) tokens and for
/// positions that contribute to the loss respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub token_ids: Array2<usize>,
    pub indicator: Array2<bool>,
    pub labels: Array2<usize>,
    pub label_mask: Array2<bool>,
    pub pad_mask: Array2<bool>,
}

/// One unpadded sequence: token ids, indicator flags and optional targets.
pub type Row = (Vec<usize>, Vec<bool>, Vec<Option<usize>>);

impl Batch {
    /// Pads rows of `(ids, flags, targets)` to the longest one.
    pub fn from_rows(rows: &[Row]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let b = rows.len();
        let n = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut batch = Batch {
            token_ids: Array2::from_elem((b, n), PAD_ID),
            indicator: Array2::from_elem((b, n), false),
            labels: Array2::zeros((b, n)),
            label_mask: Array2::from_elem((b, n), false),
            pad_mask: Array2::from_elem((b, n), false),
        };
        for (r, (ids, flags, targets)) in rows.iter().enumerate() {
            if ids.is_empty() || flags.len() != ids.len() || targets.len() != ids.len() {
                return Err(Error::Shape(format!("batch row {r} has inconsistent lengths")));
            }
            for (i, &id) in ids.iter().enumerate() {
                batch.token_ids[[r, i]] = id;
                batch.indicator[[r, i]] = flags[i];
                batch.pad_mask[[r, i]] = true;
                if let Some(t) = targets[i] {
                    batch.labels[[r, i]] = t;
                    batch.label_mask[[r, i]] = true;
                }
            }
        }
        Ok(batch)
    }

    pub fn size(&self) -> usize {
        self.token_ids.nrows()
    }

    pub fn width(&self) -> usize {
        self.token_ids.ncols()
    }

    fn row(&self, r: usize) -> (Vec<usize>, Vec<bool>, Vec<bool>, Vec<Option<usize>>) {
        let ids = self.token_ids.row(r).to_vec();
        let flags = self.indicator.row(r).to_vec();
        let mask = self.pad_mask.row(r).to_vec();
        let targets = (0..self.width())
            .map(|i| (self.label_mask[[r, i]] && self.pad_mask[[r, i]]).then_some(self.labels[[r, i]]))
            .collect();
        (ids, flags, mask, targets)
    }
}

/// Logits `[B x N x labels]`.
pub fn forward(batch: &Batch, params: &EncoderParams, cfg: &ModelConfig) -> Result<Array3<f64>> {
    let mut out = Array3::zeros((batch.size(), batch.width(), cfg.num_labels));
    for r in 0..batch.size() {
        let (ids, flags, mask, _) = batch.row(r);
        let cache = forward_sequence(cfg, params, &ids, &flags, &mask)?;
        out.index_axis_mut(Axis(0), r).assign(&cache.logits);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch's scored tokens and its gradient.
pub fn batch_loss_and_grad(batch: &Batch, params: &EncoderParams, cfg: &ModelConfig) -> Result<(f64, EncoderParams)> {
    let total_count = batch
        .label_mask
        .iter()
        .zip(batch.pad_mask.iter())
        .filter(|(l, p)| **l && **p)
        .count();
    if total_count == 0 {
        return Err(Error::Invalid("every position is ignored".into()));
    }
    let norm = total_count as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for r in 0..batch.size() {
        let (ids, flags, mask, targets) = batch.row(r);
        let cache = forward_sequence(cfg, params, &ids, &flags, &mask)?;
        let (sum, _, d_logits) = cross_entropy_sum(&cache.logits, &targets, norm);
        total += sum;
        backward_sequence(cfg, params, &cache, &d_logits, &mut grads);
    }
    Ok((total / norm, grads))
}

/// Mean batch loss without gradients.
pub fn batch_loss(batch: &Batch, params: &EncoderParams, cfg: &ModelConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..batch.size() {
        let (ids, flags, mask, targets) = batch.row(r);
        let cache = forward_sequence(cfg, params, &ids, &flags, &mask)?;
        let (sum, c, _) = cross_entropy_sum(&cache.logits, &targets, 1.0);
        total += sum;
        count += c;
    }
    if count == 0 {
        return Err(Error::Invalid("every position is ignored".into()));
    }
    Ok(total / count as f64)
}

//! Multi-head attention with optional relative-position and candidate
//! indicator terms.
//!
//! Per head, with content projections `qc, kc, vc`, position projections
//! `qp, kp` of the relative table, and indicator projections `qm, km`:
//!
//! ```text
//! A[i][j] = qc_i . kc_j                     (c2c)
//!         + qc_i . kp_{bucket(i, j)}        (c2p)
//!         + kc_j . qp_{bucket(j, i)}        (p2c)
//!         + qc_i . km_j                     (c2m)
//!         + qm_i . kc_j                     (m2c)
//! H = softmax_rows(A / sqrt(terms * d)) vc
//! ```
//!
//! Plain mode keeps only c2c; baseline mode the first three terms.

use ndarray::{s, Axis};

use super::config::AttentionMode;
use super::params::{LayerParams, Mat};
use crate::error::{Error, Result};

/// Bucketed relative distance `i - j`, clamped to `[0, 2k)`.
pub fn relative_bucket(i: usize, j: usize, k_rel: usize) -> usize {
    let k = k_rel as i64;
    let diff = i as i64 - j as i64;
    if diff <= -k {
        0
    } else if diff >= k {
        (2 * k - 1) as usize
    } else {
        (diff + k) as usize
    }
}

/// `delta[i][j] = relative_bucket(i, j)` for a length-`n` sequence.
pub fn bucket_matrix(n: usize, k_rel: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| (0..n).map(|j| relative_bucket(i, j, k_rel)).collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub heads: usize,
    pub head_dim: usize,
    pub k_rel: usize,
    pub mode: AttentionMode,
}

impl AttentionShape {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn scale(&self) -> f64 {
        ((self.mode.score_terms() * self.head_dim) as f64).sqrt()
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub x: Mat,
    pub qc: Mat,
    pub kc: Mat,
    pub vc: Mat,
    pub rel: Option<Mat>,
    pub qp: Option<Mat>,
    pub kp: Option<Mat>,
    pub m_seq: Option<Mat>,
    pub qm: Option<Mat>,
    pub km: Option<Mat>,
    /// Unscaled attention scores per head.
    pub scores: Vec<Mat>,
    /// Row-softmax weights per head; masked keys get exactly zero.
    pub weights: Vec<Mat>,
    /// Concatenated head outputs, `n x width`.
    pub context: Mat,
    pub delta: Vec<Vec<usize>>,
}

fn check(shape: &AttentionShape, x: &Mat, layer: &LayerParams, rel: Option<&Mat>, m_seq: Option<&Mat>, key_mask: &[bool]) -> Result<()> {
    let (n, w) = x.dim();
    if w != shape.width() || layer.wq.dim() != (w, w) || key_mask.len() != n {
        return Err(Error::Shape(format!("attention input {n}x{w} does not fit width {}", shape.width())));
    }
    if !key_mask.iter().any(|&m| m) {
        return Err(Error::Shape("every key is masked".into()));
    }
    if shape.mode.uses_relative() {
        let rel = rel.ok_or_else(|| Error::Shape("relative mode needs a position table".into()))?;
        if rel.dim() != (2 * shape.k_rel, w) || layer.wqp.is_none() || layer.wkp.is_none() {
            return Err(Error::Shape("relative position table or projections have the wrong shape".into()));
        }
    }
    if shape.mode == AttentionMode::ModifiedDea {
        let m = m_seq.ok_or_else(|| Error::Shape("modified attention needs an indicator sequence".into()))?;
        if m.dim() != (n, w) || layer.wqm.is_none() || layer.wkm.is_none() {
            return Err(Error::Shape("indicator sequence or projections have the wrong shape".into()));
        }
    }
    Ok(())
}

pub fn attention_forward(
    shape: &AttentionShape,
    x: &Mat,
    layer: &LayerParams,
    rel: Option<&Mat>,
    m_seq: Option<&Mat>,
    key_mask: &[bool],
) -> Result<AttentionCache> {
    check(shape, x, layer, rel, m_seq, key_mask)?;
    let n = x.nrows();
    let d = shape.head_dim;
    let relative = shape.mode.uses_relative();
    let indicator = shape.mode == AttentionMode::ModifiedDea;

    let qc = x.dot(&layer.wq) + &layer.bq;
    let kc = x.dot(&layer.wk) + &layer.bk;
    let vc = x.dot(&layer.wv) + &layer.bv;
    let (rel, qp, kp) = if relative {
        let r = rel.expect("checked").clone();
        let qp = r.dot(layer.wqp.as_ref().expect("checked"));
        let kp = r.dot(layer.wkp.as_ref().expect("checked"));
        (Some(r), Some(qp), Some(kp))
    } else {
        (None, None, None)
    };
    let (m_seq, qm, km) = if indicator {
        let m = m_seq.expect("checked").clone();
        let qm = m.dot(layer.wqm.as_ref().expect("checked"));
        let km = m.dot(layer.wkm.as_ref().expect("checked"));
        (Some(m), Some(qm), Some(km))
    } else {
        (None, None, None)
    };
    let delta = bucket_matrix(n, shape.k_rel);
    let scale = shape.scale();

    let mut scores = Vec::with_capacity(shape.heads);
    let mut weights = Vec::with_capacity(shape.heads);
    let mut context = Mat::zeros((n, shape.width()));
    for h in 0..shape.heads {
        let cols = s![.., h * d..(h + 1) * d];
        let q = qc.slice(cols);
        let k = kc.slice(cols);
        let mut a = q.dot(&k.t());
        if let (Some(qp), Some(kp)) = (&qp, &kp) {
            let c2p = q.dot(&kp.slice(cols).t());
            let p2c = k.dot(&qp.slice(cols).t());
            for i in 0..n {
                for j in 0..n {
                    a[[i, j]] += c2p[[i, delta[i][j]]] + p2c[[j, delta[j][i]]];
                }
            }
        }
        if let (Some(qm), Some(km)) = (&qm, &km) {
            a += &q.dot(&km.slice(cols).t());
            a += &qm.slice(cols).dot(&k.t());
        }
        let p = masked_softmax(&a, scale, key_mask);
        context.slice_mut(cols).assign(&p.dot(&vc.slice(cols)));
        scores.push(a);
        weights.push(p);
    }

    Ok(AttentionCache {
        x: x.clone(),
        qc,
        kc,
        vc,
        rel,
        qp,
        kp,
        m_seq,
        qm,
        km,
        scores,
        weights,
        context,
        delta,
    })
}

fn masked_softmax(a: &Mat, scale: f64, key_mask: &[bool]) -> Mat {
    let mut p = a / scale;
    for mut row in p.rows_mut() {
        let max = row
            .iter()
            .zip(key_mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (v, &m) in row.iter_mut().zip(key_mask) {
            *v = if m { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Gradients flowing out of an attention block.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub dx: Mat,
    pub d_rel: Option<Mat>,
    pub d_m_seq: Option<Mat>,
}

/// Accumulates parameter gradients into `grads` and returns input gradients.
pub fn attention_backward(
    shape: &AttentionShape,
    cache: &AttentionCache,
    layer: &LayerParams,
    d_context: &Mat,
    grads: &mut LayerParams,
) -> AttentionGrads {
    let n = cache.x.nrows();
    let w = shape.width();
    let d = shape.head_dim;
    let scale = shape.scale();
    let two_k = 2 * shape.k_rel;

    let mut dqc = Mat::zeros((n, w));
    let mut dkc = Mat::zeros((n, w));
    let mut dvc = Mat::zeros((n, w));
    let mut dqp = Mat::zeros((two_k, w));
    let mut dkp = Mat::zeros((two_k, w));
    let mut dqm = Mat::zeros((n, w));
    let mut dkm = Mat::zeros((n, w));

    for h in 0..shape.heads {
        let cols = s![.., h * d..(h + 1) * d];
        let p = &cache.weights[h];
        let q = cache.qc.slice(cols);
        let k = cache.kc.slice(cols);
        let v = cache.vc.slice(cols);
        let dctx = d_context.slice(cols);

        let dp = dctx.dot(&v.t());
        dvc.slice_mut(cols).scaled_add(1.0, &p.t().dot(&dctx));
        let mut da = Mat::zeros((n, n));
        for i in 0..n {
            let dot: f64 = (0..n).map(|l| p[[i, l]] * dp[[i, l]]).sum();
            for j in 0..n {
                da[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) / scale;
            }
        }

        dqc.slice_mut(cols).scaled_add(1.0, &da.dot(&k));
        dkc.slice_mut(cols).scaled_add(1.0, &da.t().dot(&q));

        if let (Some(qp), Some(kp)) = (&cache.qp, &cache.kp) {
            let mut d_c2p = Mat::zeros((n, two_k));
            let mut d_p2c = Mat::zeros((n, two_k));
            for i in 0..n {
                for j in 0..n {
                    d_c2p[[i, cache.delta[i][j]]] += da[[i, j]];
                    d_p2c[[j, cache.delta[j][i]]] += da[[i, j]];
                }
            }
            dqc.slice_mut(cols).scaled_add(1.0, &d_c2p.dot(&kp.slice(cols)));
            dkp.slice_mut(cols).scaled_add(1.0, &d_c2p.t().dot(&q));
            dkc.slice_mut(cols).scaled_add(1.0, &d_p2c.dot(&qp.slice(cols)));
            dqp.slice_mut(cols).scaled_add(1.0, &d_p2c.t().dot(&k));
        }

        if let (Some(qm), Some(km)) = (&cache.qm, &cache.km) {
            dqc.slice_mut(cols).scaled_add(1.0, &da.dot(&km.slice(cols)));
            dkm.slice_mut(cols).scaled_add(1.0, &da.t().dot(&q));
            dqm.slice_mut(cols).scaled_add(1.0, &da.dot(&k));
            dkc.slice_mut(cols).scaled_add(1.0, &da.t().dot(&qm.slice(cols)));
        }
    }

    let x = &cache.x;
    grads.wq.scaled_add(1.0, &x.t().dot(&dqc));
    grads.bq.scaled_add(1.0, &dqc.sum_axis(Axis(0)).insert_axis(Axis(0)));
    grads.wk.scaled_add(1.0, &x.t().dot(&dkc));
    grads.bk.scaled_add(1.0, &dkc.sum_axis(Axis(0)).insert_axis(Axis(0)));
    grads.wv.scaled_add(1.0, &x.t().dot(&dvc));
    grads.bv.scaled_add(1.0, &dvc.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let dx = dqc.dot(&layer.wq.t()) + dkc.dot(&layer.wk.t()) + dvc.dot(&layer.wv.t());

    let d_rel = cache.rel.as_ref().map(|rel| {
        let (wqp, wkp) = (layer.wqp.as_ref().expect("relative"), layer.wkp.as_ref().expect("relative"));
        grads.wqp.as_mut().expect("relative").scaled_add(1.0, &rel.t().dot(&dqp));
        grads.wkp.as_mut().expect("relative").scaled_add(1.0, &rel.t().dot(&dkp));
        dqp.dot(&wqp.t()) + dkp.dot(&wkp.t())
    });
    let d_m_seq = cache.m_seq.as_ref().map(|m| {
        let (wqm, wkm) = (layer.wqm.as_ref().expect("indicator"), layer.wkm.as_ref().expect("indicator"));
        grads.wqm.as_mut().expect("indicator").scaled_add(1.0, &m.t().dot(&dqm));
        grads.wkm.as_mut().expect("indicator").scaled_add(1.0, &m.t().dot(&dkm));
        dqm.dot(&wqm.t()) + dkm.dot(&wkm.t())
    });

    AttentionGrads { dx, d_rel, d_m_seq }
}

/// Output of a standalone attention evaluation.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Unscaled scores `A` per head.
    pub scores: Vec<Mat>,
    pub weights: Vec<Mat>,
    /// Concatenated `softmax(A / scale) V` over heads.
    pub hidden: Mat,
}

impl From<AttentionCache> for AttentionOutput {
    fn from(c: AttentionCache) -> Self {
        AttentionOutput {
            scores: c.scores,
            weights: c.weights,
            hidden: c.context,
        }
    }
}

/// Content plus relative-position attention, scaled by `sqrt(3d)`.
pub fn disentangled_attention(
    x: &Mat,
    layer: &LayerParams,
    rel: &Mat,
    heads: usize,
    k_rel: usize,
    key_mask: &[bool],
) -> Result<AttentionOutput> {
    let shape = AttentionShape {
        heads,
        head_dim: x.ncols() / heads.max(1),
        k_rel,
        mode: AttentionMode::BaselineDea,
    };
    attention_forward(&shape, x, layer, Some(rel), None, key_mask).map(Into::into)
}

/// Builds the indicator sequence: `m_plus` rows for flagged tokens,
/// `m_minus` otherwise.
pub fn indicator_sequence(flags: &[bool], m_plus: &Mat, m_minus: &Mat) -> Mat {
    let w = m_plus.ncols();
    let mut m = Mat::zeros((flags.len(), w));
    for (i, &f) in flags.iter().enumerate() {
        m.row_mut(i).assign(&if f { m_plus.row(0) } else { m_minus.row(0) });
    }
    m
}

/// Disentangled attention plus the indicator terms, scaled by `sqrt(5d)`.
#[allow(clippy::too_many_arguments)]
pub fn modified_attention(
    x: &Mat,
    layer: &LayerParams,
    rel: &Mat,
    flags: &[bool],
    m_plus: &Mat,
    m_minus: &Mat,
    heads: usize,
    k_rel: usize,
    key_mask: &[bool],
) -> Result<AttentionOutput> {
    if flags.len() != x.nrows() {
        return Err(Error::Shape(format!("{} flags for {} tokens", flags.len(), x.nrows())));
    }
    let shape = AttentionShape {
        heads,
        head_dim: x.ncols() / heads.max(1),
        k_rel,
        mode: AttentionMode::ModifiedDea,
    };
    let m = indicator_sequence(flags, m_plus, m_minus);
    attention_forward(&shape, x, layer, Some(rel), Some(&m), key_mask).map(Into::into)
}

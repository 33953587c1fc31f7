use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{AttentionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::rng;

pub type Mat = Array2<f64>;

/// Weights of one encoder block. Row vectors (biases, norms) are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    /// Query/key projections of the relative position table.
    pub wqp: Option<Mat>,
    pub wkp: Option<Mat>,
    /// Query/key projections of the candidate indicator sequence.
    pub wqm: Option<Mat>,
    pub wkm: Option<Mat>,
    pub wo: Mat,
    pub bo: Mat,
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub tok_emb: Mat,
    /// Absolute positions, plain attention only.
    pub abs_pos: Option<Mat>,
    /// `2 k_rel x width` relative position table shared by all layers.
    pub rel_pos: Option<Mat>,
    /// Indicator embeddings for candidate (`m_plus`) and other tokens.
    pub m_plus: Option<Mat>,
    pub m_minus: Option<Mat>,
    pub emb_ln_g: Mat,
    pub emb_ln_b: Mat,
    pub layers: Vec<LayerParams>,
    pub head_w: Mat,
    pub head_b: Mat,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

fn filled(cols: usize, value: f64) -> Mat {
    Mat::from_elem((1, cols), value)
}

impl EncoderParams {
    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::substream(seed, rng::INIT_STREAM);
        let w = cfg.width();
        let f = cfg.ffn_width();
        let v = cfg.vocab.len();
        let mode = cfg.mode;
        let rel = mode.uses_relative();
        let ind = mode == AttentionMode::ModifiedDea;

        let tok_emb = uniform(&mut rng, v, w, w);
        let abs_pos = (!rel).then(|| uniform(&mut rng, cfg.max_len, w, w));
        let rel_pos = rel.then(|| uniform(&mut rng, 2 * cfg.k_rel, w, w));
        let m_plus = ind.then(|| uniform(&mut rng, 1, w, w));
        let m_minus = ind.then(|| uniform(&mut rng, 1, w, w));
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                wq: uniform(&mut rng, w, w, w),
                bq: filled(w, 0.0),
                wk: uniform(&mut rng, w, w, w),
                bk: filled(w, 0.0),
                wv: uniform(&mut rng, w, w, w),
                bv: filled(w, 0.0),
                wqp: rel.then(|| uniform(&mut rng, w, w, w)),
                wkp: rel.then(|| uniform(&mut rng, w, w, w)),
                wqm: ind.then(|| uniform(&mut rng, w, w, w)),
                wkm: ind.then(|| uniform(&mut rng, w, w, w)),
                wo: uniform(&mut rng, w, w, w),
                bo: filled(w, 0.0),
                ln1_g: filled(w, 1.0),
                ln1_b: filled(w, 0.0),
                w1: uniform(&mut rng, w, f, w),
                b1: filled(f, 0.0),
                w2: uniform(&mut rng, f, w, f),
                b2: filled(w, 0.0),
                ln2_g: filled(w, 1.0),
                ln2_b: filled(w, 0.0),
            })
            .collect();
        let head_w = uniform(&mut rng, w, cfg.num_labels, w);
        let params = EncoderParams {
            tok_emb,
            abs_pos,
            rel_pos,
            m_plus,
            m_minus,
            emb_ln_g: filled(w, 1.0),
            emb_ln_b: filled(w, 0.0),
            layers,
            head_w,
            head_b: filled(cfg.num_labels, 0.0),
        };
        if ind && params.m_plus == params.m_minus {
            return Err(Error::Invalid("indicator embeddings initialised identically".into()));
        }
        Ok(params)
    }

    /// All tensors in declaration order, with stable names.
    pub fn named(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![("tok_emb".into(), &self.tok_emb)];
        for (n, m) in [
            ("abs_pos", &self.abs_pos),
            ("rel_pos", &self.rel_pos),
            ("m_plus", &self.m_plus),
            ("m_minus", &self.m_minus),
        ] {
            if let Some(m) = m {
                out.push((n.to_string(), m));
            }
        }
        out.push(("emb_ln_g".into(), &self.emb_ln_g));
        out.push(("emb_ln_b".into(), &self.emb_ln_b));
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("wq"), &l.wq));
            out.push((p("bq"), &l.bq));
            out.push((p("wk"), &l.wk));
            out.push((p("bk"), &l.bk));
            out.push((p("wv"), &l.wv));
            out.push((p("bv"), &l.bv));
            for (n, m) in [("wqp", &l.wqp), ("wkp", &l.wkp), ("wqm", &l.wqm), ("wkm", &l.wkm)] {
                if let Some(m) = m {
                    out.push((p(n), m));
                }
            }
            out.push((p("wo"), &l.wo));
            out.push((p("bo"), &l.bo));
            out.push((p("ln1_g"), &l.ln1_g));
            out.push((p("ln1_b"), &l.ln1_b));
            out.push((p("w1"), &l.w1));
            out.push((p("b1"), &l.b1));
            out.push((p("w2"), &l.w2));
            out.push((p("b2"), &l.b2));
            out.push((p("ln2_g"), &l.ln2_g));
            out.push((p("ln2_b"), &l.ln2_b));
        }
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    /// Mutable tensors in the same order as [`EncoderParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out: Vec<(String, &mut Mat)> = vec![("tok_emb".into(), &mut self.tok_emb)];
        for (n, m) in [
            ("abs_pos", &mut self.abs_pos),
            ("rel_pos", &mut self.rel_pos),
            ("m_plus", &mut self.m_plus),
            ("m_minus", &mut self.m_minus),
        ] {
            if let Some(m) = m.as_mut() {
                out.push((n.to_string(), m));
            }
        }
        out.push(("emb_ln_g".into(), &mut self.emb_ln_g));
        out.push(("emb_ln_b".into(), &mut self.emb_ln_b));
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("wq"), &mut l.wq));
            out.push((p("bq"), &mut l.bq));
            out.push((p("wk"), &mut l.wk));
            out.push((p("bk"), &mut l.bk));
            out.push((p("wv"), &mut l.wv));
            out.push((p("bv"), &mut l.bv));
            for (n, m) in [("wqp", &mut l.wqp), ("wkp", &mut l.wkp), ("wqm", &mut l.wqm), ("wkm", &mut l.wkm)] {
                if let Some(m) = m.as_mut() {
                    out.push((p(n), m));
                }
            }
            out.push((p("wo"), &mut l.wo));
            out.push((p("bo"), &mut l.bo));
            out.push((p("ln1_g"), &mut l.ln1_g));
            out.push((p("ln1_b"), &mut l.ln1_b));
            out.push((p("w1"), &mut l.w1));
            out.push((p("b1"), &mut l.b1));
            out.push((p("w2"), &mut l.w2));
            out.push((p("b2"), &mut l.b2));
            out.push((p("ln2_g"), &mut l.ln2_g));
            out.push((p("ln2_b"), &mut l.ln2_b));
        }
        out.push(("head_w".into(), &mut self.head_w));
        out.push(("head_b".into(), &mut self.head_b));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.named_mut() {
            m.fill(0.0);
        }
        z
    }

    pub fn scalar_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = EncoderParams::init(cfg, 0)?;
        let ours = self.named();
        let want = reference.named();
        if ours.len() != want.len() {
            return Err(Error::Shape(format!("{} tensors, expected {}", ours.len(), want.len())));
        }
        for ((n, a), (wn, b)) in ours.iter().zip(&want) {
            if n != wn || a.dim() != b.dim() {
                return Err(Error::Shape(format!("tensor `{n}` {:?}, expected `{wn}` {:?}", a.dim(), b.dim())));
            }
        }
        Ok(())
    }
}

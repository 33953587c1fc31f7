use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encoder::{batch_loss, batch_loss_and_grad, Batch};
use super::params::EncoderParams;
use crate::error::Result;

const STEP: f64 = 1e-5;
/// Denominator floor for tensors whose true gradient vanishes (a key bias
/// under content-only attention, for example), where central differences
/// return rounding noise of order 1e-11.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub scalars: usize,
    pub max_abs_error: f64,
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|, 1e-6)`.
    pub rel_error: f64,
    pub max_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compares analytic gradients with central differences for every scalar
/// of every tensor. The step is `1e-5 * max(1, |theta|)`.
pub fn gradient_check(cfg: &ModelConfig, params: &EncoderParams, batch: &Batch, tolerance: f64) -> Result<GradCheckReport> {
    let (loss, grads) = batch_loss_and_grad(batch, params, cfg)?;
    let analytic = grads.named();
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (t, (name, g)) in analytic.iter().enumerate() {
        let values: Vec<f64> = g.iter().copied().collect();
        let len = values.len();
        let mut max_abs: f64 = 0.0;
        let mut max_a: f64 = 0.0;
        let mut max_n: f64 = 0.0;
        for (k, &a) in values.iter().enumerate() {
            let original = probe_value(&mut probe, t, k, None);
            let h = STEP * original.abs().max(1.0);
            probe_value(&mut probe, t, k, Some(original + h));
            let plus = batch_loss(batch, &probe, cfg)?;
            probe_value(&mut probe, t, k, Some(original - h));
            let minus = batch_loss(batch, &probe, cfg)?;
            probe_value(&mut probe, t, k, Some(original));
            let numeric = (plus - minus) / (2.0 * h);
            max_abs = max_abs.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            scalars: len,
            max_abs_error: max_abs,
            rel_error: max_abs / max_a.max(max_n).max(FLOOR),
            max_grad: max_a,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss,
        tolerance,
        tensors,
        max_rel_error,
        passed: max_rel_error < tolerance,
    })
}

/// Reads scalar `k` of tensor `t`, optionally overwriting it first.
fn probe_value(params: &mut EncoderParams, t: usize, k: usize, set: Option<f64>) -> f64 {
    let mut named = params.named_mut();
    let m = &mut named[t].1;
    let slot = m.iter_mut().nth(k).expect("index within tensor");
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{AttentionMode, Vocab};

    #[test]
    fn every_mode_small() {
        for mode in [AttentionMode::Plain, AttentionMode::BaselineDea, AttentionMode::ModifiedDea] {
            let mut cfg = ModelConfig::toy(Vocab::build(["a", "b", "c"]), mode);
            cfg.head_dim = 4;
            cfg.layers = 2;
            cfg.k_rel = 2;
            let params = EncoderParams::init(&cfg, 2).unwrap();
            let batch = Batch::from_rows(&[
                (vec![4, 5, 6, 4], vec![false, true, true, false], vec![Some(0), Some(4), None, Some(2)]),
                (vec![6, 2], vec![true, false], vec![Some(1), Some(3)]),
            ])
            .unwrap();
            let report = gradient_check(&cfg, &params, &batch, 1e-4).unwrap();
            assert!(report.passed, "{mode:?}: {report:#?}");
        }
    }
}

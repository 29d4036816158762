//! Training objectives as graph expressions.

use crate::error::{shape_err, Result};
use crate::tensor::{Graph, Tensor, Var};

use super::LossConfig;

/// Floor applied to predicted probabilities inside the cross-entropy log.
pub const CE_FLOOR: f64 = 1e-12;
/// Distance from 0 and 1 kept by detection probabilities inside the BCE logs.
pub const BCE_EPSILON: f64 = 1e-7;

/// `−Σ_t Σ_b Σ_i y·log ŷ` over per-step predictions and labels of equal shape.
pub fn seq_ce_loss(g: &mut Graph, preds: &[Var], labels: &[Var]) -> Result<Var> {
    if preds.len() != labels.len() || preds.is_empty() {
        return shape_err(format!("{} prediction steps for {} label steps", preds.len(), labels.len()));
    }
    let mut total = None;
    for (&p, &y) in preds.iter().zip(labels) {
        if g.shape(p) != g.shape(y) {
            return shape_err(format!("prediction {:?} vs label {:?}", g.shape(p), g.shape(y)));
        }
        let floored = g.clip(p, CE_FLOOR, f64::INFINITY)?;
        let logp = g.log(floored)?;
        let term = g.mul(y, logp)?;
        let s = g.sum(term)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    g.scale(total.expect("non-empty"), -1.0)
}

/// Mean binary cross-entropy; with `weights = Some((w1, w0))` each term is
/// scaled by `y·w1 + (1−y)·w0`.
pub fn bce_loss(g: &mut Graph, pred: Var, label: &Tensor, weights: Option<(f64, f64)>) -> Result<Var> {
    if g.shape(pred) != label.shape() {
        return shape_err(format!("prediction {:?} vs label {:?}", g.shape(pred), label.shape()));
    }
    let dtype = g.value(pred).dtype();
    let y = g.constant(label.to_dtype(dtype));
    let not_y = g.constant(label.map(|v| 1.0 - v)?.to_dtype(dtype));
    let p = g.clip(pred, BCE_EPSILON, 1.0 - BCE_EPSILON)?;
    let logp = g.log(p)?;
    let neg = g.scale(p, -1.0)?;
    let q = g.offset(neg, 1.0)?;
    let logq = g.log(q)?;
    let a = g.mul(y, logp)?;
    let b = g.mul(not_y, logq)?;
    let mut ll = g.add(a, b)?;
    if let Some((w1, w0)) = weights {
        let w = g.constant(label.map(|v| v * w1 + (1.0 - v) * w0)?.to_dtype(dtype));
        ll = g.mul(w, ll)?;
    }
    let m = g.mean(ll)?;
    g.scale(m, -1.0)
}

/// `w_fix·L_fix + (1 − w_fix)·L_det`.
pub fn dual_loss(g: &mut Graph, l_fix: Var, l_det: Var, cfg: &LossConfig) -> Result<Var> {
    let a = g.scale(l_fix, cfg.w_fix)?;
    let b = g.scale(l_det, 1.0 - cfg.w_fix)?;
    g.add(a, b)
}

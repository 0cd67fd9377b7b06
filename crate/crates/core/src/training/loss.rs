//! Loss terms: mask-aware cross-entropy, text similarity, InfoNCE and L2.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::cues::text::{cosine, SentenceEmbedder};
use crate::error::{Result, VipError};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub text: f64,
    pub cont: f64,
    pub reg: f64,
    pub lambda_text: f64,
    pub lambda_cont: f64,
    pub lambda_reg: f64,
}

impl LossBreakdown {
    pub fn new(cls: f64, text: f64, cont: f64, reg: f64, lambdas: (f64, f64, f64)) -> Self {
        let (lt, lc, lr) = lambdas;
        Self { total: cls + lt * text + lc * cont + lr * reg, cls, text, cont, reg, lambda_text: lt, lambda_cont: lc, lambda_reg: lr }
    }

    /// First non-finite term, by name.
    pub fn non_finite(&self) -> Option<(&'static str, f64)> {
        [("cls", self.cls), ("text", self.text), ("cont", self.cont), ("reg", self.reg), ("total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
    }
}

/// `−log p(vip)` from probabilities over persons; the true VIP must be valid.
pub fn loss_cls(probabilities: &[f64], vip: usize, person_valid: &[bool]) -> Result<f64> {
    if !person_valid.get(vip).copied().unwrap_or(false) {
        return Err(VipError::Data(format!("ground-truth person index {vip} is not valid")));
    }
    Ok(-probabilities[vip].ln())
}

/// `1 − cos(v_pred, v_truth)`; `None` when the truth text is empty.
pub fn loss_text(pred: &str, truth: &str, embedder: &dyn SentenceEmbedder) -> Option<f64> {
    if truth.trim().is_empty() {
        return None;
    }
    Some(1.0 - cosine(&embedder.embed(pred), &embedder.embed(truth)))
}

/// InfoNCE with the positive in the denominator, on cosine similarities.
/// No negatives gives 0.
pub fn loss_cont(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    if negatives.is_empty() {
        return 0.0;
    }
    let sp = cosine(anchor, positive) / tau;
    let sn: Vec<f64> = negatives.iter().map(|n| cosine(anchor, n) / tau).collect();
    let max = sn.iter().copied().fold(sp, f64::max);
    let denom = (sp - max).exp() + sn.iter().map(|s| (s - max).exp()).sum::<f64>();
    -(sp - max - denom.ln())
}

/// Graph InfoNCE for one anchor. `negatives` is `K × D` (`K ≥ 1`).
pub fn loss_cont_graph(g: &mut Graph, anchor: Var, positive: Var, negatives: Var, tau: f64) -> Var {
    let a = g.normalize_rows(anchor);
    let p = g.normalize_rows(positive);
    let n = g.normalize_rows(negatives);
    let sp = g.matmul_t(a, p);
    let sn = g.matmul_t(a, n);
    let logits = g.concat_cols(&[sp, sn]);
    let logits = g.scale(logits, 1.0 / tau);
    let k = g.value(logits).cols;
    let lp = g.masked_log_softmax(logits, &vec![true; k]);
    let first = g.pick(lp, 0, 0);
    g.scale(first, -1.0)
}

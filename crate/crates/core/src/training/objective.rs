//! The batch training objective built on one graph.

use crate::autodiff::{Graph, Var};
use crate::config::{ModelConfig, TrainConfig};
use crate::cues::text::SentenceEmbedder;
use crate::cues::{extract_features, ClipFeatures};
use crate::data::Clip;
use crate::error::{Result, VipError};
use crate::inference::{cue_ranks, cue_scores, make_rationale, rank};
use crate::model::{classify_log_probs, ForwardPass, VipNet};

use super::loss::{loss_cont_graph, loss_text, LossBreakdown};

/// A training example: cue inputs, the true VIP row and the reference
/// rationale.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: ClipFeatures,
    pub vip: usize,
    pub rationale: String,
}

impl Sample {
    pub fn from_clip(clip: &Clip, cfg: &ModelConfig) -> Result<Self> {
        let features = extract_features(clip, cfg)?;
        let vip = clip
            .vip_index()
            .ok_or_else(|| VipError::Data(format!("clip {}: vip {} is not a person", clip.clip_id, clip.vip_person_id)))?;
        if !features.mask.person_valid[vip] {
            return Err(VipError::Data(format!("clip {}: vip {} has no valid frame", clip.clip_id, clip.vip_person_id)));
        }
        Ok(Self { features, vip, rationale: clip.rationale_text.clone() })
    }
}

/// Length of the augmented view for a clip of `t` frames.
pub fn view_len(t: usize, jitter: usize) -> usize {
    if t > jitter {
        t - jitter
    } else {
        t
    }
}

pub struct Objective {
    pub total: Var,
    pub cls: Var,
    /// Absent when `λ_cont = 0`.
    pub cont: Option<Var>,
    pub reg: Var,
    pub passes: Vec<ForwardPass>,
    pub probabilities: Vec<Vec<f64>>,
    pub breakdown: LossBreakdown,
}

/// Builds `L_total` for a batch. `offsets[b]` is the start frame of the
/// second view of clip `b`; it is ignored when `λ_cont = 0`. The text term
/// enters as a constant.
pub fn objective(
    g: &mut Graph,
    net: &VipNet,
    batch: &[Sample],
    offsets: &[usize],
    cfg: &TrainConfig,
    embedder: &dyn SentenceEmbedder,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(VipError::Argument("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut passes = Vec::with_capacity(batch.len());
    let mut probabilities = Vec::with_capacity(batch.len());
    let mut cls_terms = Vec::with_capacity(batch.len());
    let mut text_terms = Vec::new();
    for s in batch {
        let f = &s.features;
        if !f.mask.person_valid.get(s.vip).copied().unwrap_or(false) {
            return Err(VipError::Data(format!("clip {}: ground-truth person index {} is not valid", f.clip_id, s.vip)));
        }
        let pass = net.forward(g, f);
        let lp = classify_log_probs(g, pass.h, &f.mask.person_valid, cfg.tau_c);
        cls_terms.push(g.pick(lp, 0, s.vip));
        let p: Vec<f64> = g.value(lp).data.iter().map(|x| x.exp()).collect();
        let pred_id = rank(&p, &f.person_ids)[0];
        let pred = f.person_ids.iter().position(|x| *x == pred_id).expect("ranked id");
        let ranks = cue_ranks(&cue_scores(f, &net.lip_scores(g, &pass, f)), pred, &f.mask.person_valid);
        let template = make_rationale(&ranks, cfg.tau_m).template_text;
        if let Some(t) = loss_text(&template, &s.rationale, embedder) {
            text_terms.push(t);
        }
        probabilities.push(p);
        passes.push(pass);
    }
    let cls_sum = sum(g, &cls_terms);
    let cls = g.scale(cls_sum, -scale);

    let cont = if cfg.lambda_cont > 0.0 { contrastive(g, net, batch, &passes, offsets, cfg) } else { None };

    let mut reg_terms = Vec::new();
    for id in net.params.ids() {
        let p = g.param(id);
        reg_terms.push(g.sum_squares(p));
    }
    let reg = sum(g, &reg_terms);

    let (text, lambda_text) = if text_terms.is_empty() {
        (0.0, 0.0)
    } else {
        (text_terms.iter().sum::<f64>() / text_terms.len() as f64, cfg.lambda_text)
    };
    let weighted_reg = g.scale(reg, cfg.lambda_reg);
    let mut total = g.add(cls, weighted_reg);
    if let Some(c) = cont {
        let wc = g.scale(c, cfg.lambda_cont);
        total = g.add(total, wc);
    }
    let total = g.add_scalar(total, lambda_text * text);

    let breakdown = LossBreakdown::new(
        g.value(cls).item(),
        text,
        cont.map_or(0.0, |c| g.value(c).item()),
        g.value(reg).item(),
        (lambda_text, if cont.is_some() { cfg.lambda_cont } else { 0.0 }, cfg.lambda_reg),
    );
    Ok(Objective { total, cls, cont, reg, passes, probabilities, breakdown })
}

fn sum(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = g.add(acc, *t);
    }
    acc
}

/// InfoNCE per clip: anchor is the VIP row of the full view, positive the
/// VIP row of the cropped view, negatives every other scorable row of the
/// batch. Averaged over clips that have negatives.
fn contrastive(
    g: &mut Graph,
    net: &VipNet,
    batch: &[Sample],
    passes: &[ForwardPass],
    offsets: &[usize],
    cfg: &TrainConfig,
) -> Option<Var> {
    let mut neg_rows = Vec::new();
    for (s, pass) in batch.iter().zip(passes) {
        let scorable = crate::model::scorable(g.value(pass.h), &s.features.mask.person_valid);
        for (i, ok) in scorable.into_iter().enumerate() {
            if ok && i != s.vip {
                neg_rows.push(g.select_rows(pass.h, &[i]));
            }
        }
    }
    if neg_rows.is_empty() {
        return None;
    }
    let negatives = g.concat_rows(&neg_rows);
    let mut terms = Vec::with_capacity(batch.len());
    for (b, (s, pass)) in batch.iter().zip(passes).enumerate() {
        let f = &s.features;
        let len = view_len(f.num_frames, cfg.jitter);
        let start = offsets.get(b).copied().unwrap_or(0).min(f.num_frames - len);
        let view = f.crop_frames(start, len);
        if !view.mask.person_valid[s.vip] {
            continue;
        }
        let pass2 = net.forward(g, &view);
        let anchor = g.select_rows(pass.h, &[s.vip]);
        let positive = g.select_rows(pass2.h, &[s.vip]);
        terms.push(loss_cont_graph(g, anchor, positive, negatives, cfg.tau_cont));
    }
    if terms.is_empty() {
        return None;
    }
    let n = terms.len() as f64;
    let s = sum(g, &terms);
    Some(g.scale(s, 1.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::text::HashingSentenceEmbedder;
    use crate::synth::{synthesize, Channel, Interval, ScenarioSpec};

    fn batch(net: &VipNet) -> Vec<Sample> {
        (0..2)
            .map(|k| {
                let spec = ScenarioSpec::new(k, 3, 12, vec![Interval { start: 0, end: 12, person: k as u32, channel: Channel::Speech }]);
                Sample::from_clip(&synthesize(&spec).unwrap().0, &net.config).unwrap()
            })
            .collect()
    }

    #[test]
    fn decomposition_identity_and_structure() {
        let net = VipNet::new(ModelConfig::toy(8)).unwrap();
        let b = batch(&net);
        let e = HashingSentenceEmbedder::default();
        let cfg = TrainConfig::default();
        let mut g = net.graph();
        let o = objective(&mut g, &net, &b, &[1, 2], &cfg, &e).unwrap();
        let br = o.breakdown;
        assert!(o.cont.is_some());
        assert!((g.value(o.total).item() - br.total).abs() < 1e-9);
        assert!((br.total - (br.cls + br.lambda_text * br.text + br.lambda_cont * br.cont + br.lambda_reg * br.reg)).abs() < 1e-9);
        assert!(br.cls >= 0.0 && br.cont >= 0.0 && br.reg >= 0.0 && (0.0..=2.0).contains(&br.text));

        let off = TrainConfig { lambda_cont: 0.0, ..cfg };
        let mut g2 = net.graph();
        let o2 = objective(&mut g2, &net, &b, &[1, 2], &off, &e).unwrap();
        assert!(o2.cont.is_none());
        assert_eq!(o2.breakdown.cont, 0.0);
        assert!(g2.len() < g.len());
    }

    #[test]
    fn empty_truth_text_drops_the_text_weight() {
        let net = VipNet::new(ModelConfig::toy(8)).unwrap();
        let mut b = batch(&net);
        for s in &mut b {
            s.rationale.clear();
        }
        let mut g = net.graph();
        let o = objective(&mut g, &net, &b, &[0, 0], &TrainConfig::default(), &HashingSentenceEmbedder::default()).unwrap();
        assert_eq!(o.breakdown.lambda_text, 0.0);
    }
}

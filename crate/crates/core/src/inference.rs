//! VIP inference: temperature-scaled classification, ranking, per-cue
//! percentile ranks and template rationales.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::InferenceConfig;
use crate::cues::{extract_features, ClipFeatures, Cue};
use crate::data::Clip;
use crate::error::{Result, VipError};
use crate::model::{classify_log_probs, VipNet};

/// Softmax over valid persons of `logits / τ`; invalid persons and
/// non-finite logits get exactly 0.
pub fn softmax_masked(logits: &[f64], valid: &[bool], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(VipError::Argument(format!("temperature must be positive, got {tau}")));
    }
    let ok: Vec<bool> = logits.iter().zip(valid).map(|(l, v)| *v && l.is_finite()).collect();
    let max = logits.iter().zip(&ok).filter(|(_, o)| **o).map(|(l, _)| *l / tau).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(VipError::Inference("no valid person to classify".into()));
    }
    let e: Vec<f64> = logits.iter().zip(&ok).map(|(l, o)| if *o { (l / tau - max).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

/// Probabilities from embeddings: softmax of `(h_n·w)/(τ_c‖h_n‖)`; zero-norm
/// and invalid rows get 0.
pub fn classify(h: &[Vec<f64>], w: &[f64], person_valid: &[bool], tau_c: f64) -> Result<Vec<f64>> {
    let logits: Vec<f64> = h
        .iter()
        .map(|row| {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                f64::NEG_INFINITY
            } else {
                crate::tensor::dot(row, w) / n
            }
        })
        .collect();
    softmax_masked(&logits, person_valid, tau_c)
}

/// Person ids by descending probability; ties by ascending id.
pub fn rank(probabilities: &[f64], person_ids: &[u32]) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..probabilities.len()).collect();
    idx.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(person_ids[a].cmp(&person_ids[b])));
    idx.into_iter().map(|i| person_ids[i]).collect()
}

/// Fraction of other valid persons whose score is strictly below the VIP's.
/// A sole valid person ranks 1.0.
pub fn percentile_rank(scores: &[f64], vip: usize, valid: &[bool]) -> f64 {
    let others: Vec<f64> = (0..scores.len()).filter(|&m| m != vip && valid[m]).map(|m| scores[m]).collect();
    if others.is_empty() {
        return 1.0;
    }
    others.iter().filter(|s| **s < scores[vip]).count() as f64 / others.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    #[default]
    Baseline,
    Unguided,
    Guided,
}

impl GuidanceMode {
    pub fn parse(s: &str) -> Option<GuidanceMode> {
        match s {
            "baseline" => Some(GuidanceMode::Baseline),
            "unguided" => Some(GuidanceMode::Unguided),
            "guided" => Some(GuidanceMode::Guided),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedCue {
    pub cue: Cue,
    pub rank: f64,
    pub clause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub retained_cues: Vec<RetainedCue>,
    pub template_text: String,
    pub refined_text: Option<String>,
    pub guidance_mode: GuidanceMode,
    /// Set when refinement failed and the template was used instead.
    #[serde(default)]
    pub refinement_warning: Option<String>,
}

pub const FALLBACK_RATIONALE: &str = "The person is the most contextually significant individual in the scene.";

pub fn clause(cue: Cue) -> &'static str {
    match cue {
        Cue::Centrality => "holds central prominence",
        Cue::Area => "occupies a dominant share of the frame",
        Cue::Clarity => "appears in sharp focus",
        Cue::Lip => "engages in continuous active speech",
        Cue::Action => "performs salient physical actions",
    }
}

/// Joins clauses as "A", "A and B", "A, B and C".
pub fn join_clauses(clauses: &[&str]) -> String {
    match clauses {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Retains cues with `R_k > τ_m` in the fixed cue order and renders the
/// template sentence.
pub fn make_rationale(ranks: &BTreeMap<Cue, f64>, tau_m: f64) -> Rationale {
    let retained: Vec<RetainedCue> = Cue::ALL
        .iter()
        .filter_map(|c| {
            let r = *ranks.get(c)?;
            (r > tau_m).then(|| RetainedCue { cue: *c, rank: r, clause: clause(*c).to_string() })
        })
        .collect();
    let template_text = template_text(&retained);
    Rationale { retained_cues: retained, template_text, refined_text: None, guidance_mode: GuidanceMode::Baseline, refinement_warning: None }
}

pub fn template_text(retained: &[RetainedCue]) -> String {
    if retained.is_empty() {
        return FALLBACK_RATIONALE.to_string();
    }
    let clauses: Vec<&str> = retained.iter().map(|r| r.clause.as_str()).collect();
    format!("The person {}.", join_clauses(&clauses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceResult {
    pub clip_id: String,
    pub person_ids: Vec<u32>,
    pub probabilities: Vec<f64>,
    pub ranked_ids: Vec<u32>,
    pub vip_id: u32,
    pub per_cue_rank: BTreeMap<Cue, f64>,
    /// Per-person scalar cue scores used for the ranks.
    pub cue_scores: BTreeMap<Cue, Vec<f64>>,
}

/// Per-person cue scores: spatial cues are means over valid frames, action
/// and lip the scalar per-person scores.
pub fn cue_scores(f: &ClipFeatures, lip_scores: &[f64]) -> BTreeMap<Cue, Vec<f64>> {
    Cue::ALL
        .iter()
        .map(|c| {
            let v = match c {
                Cue::Lip => lip_scores.to_vec(),
                _ => (0..f.num_persons()).map(|n| f.person_score(*c, n).unwrap_or(0.0)).collect(),
            };
            (*c, v)
        })
        .collect()
}

pub fn cue_ranks(scores: &BTreeMap<Cue, Vec<f64>>, vip: usize, valid: &[bool]) -> BTreeMap<Cue, f64> {
    scores.iter().map(|(c, s)| (*c, percentile_rank(s, vip, valid))).collect()
}

/// Forward pass, classification, ranking and per-cue ranks for one clip.
pub fn predict_features(net: &VipNet, f: &ClipFeatures, cfg: &InferenceConfig) -> Result<ImportanceResult> {
    if !f.mask.person_valid.iter().any(|v| *v) {
        return Err(VipError::Inference(format!("clip {} has no valid person", f.clip_id)));
    }
    let mut g = net.graph();
    let pass = net.forward(&mut g, f);
    let lp = classify_log_probs(&mut g, pass.h, &f.mask.person_valid, cfg.tau_c);
    let probabilities: Vec<f64> = g.value(lp).data.iter().map(|x| x.exp()).collect();
    if probabilities.iter().all(|p| *p == 0.0) {
        return Err(VipError::Inference(format!("clip {}: every person embedding is zero", f.clip_id)));
    }
    let ranked_ids = rank(&probabilities, &f.person_ids);
    let vip_id = ranked_ids[0];
    let vip = f.person_ids.iter().position(|p| *p == vip_id).expect("ranked id");
    let lips = net.lip_scores(&g, &pass, f);
    let scores = cue_scores(f, &lips);
    let per_cue_rank = cue_ranks(&scores, vip, &f.mask.person_valid);
    Ok(ImportanceResult {
        clip_id: f.clip_id.clone(),
        person_ids: f.person_ids.clone(),
        probabilities,
        ranked_ids,
        vip_id,
        per_cue_rank,
        cue_scores: scores,
    })
}

pub fn predict(net: &VipNet, clip: &Clip, cfg: &InferenceConfig) -> Result<ImportanceResult> {
    let f = extract_features(clip, &net.config)?;
    predict_features(net, &f, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_hand_values() {
        let p = softmax_masked(&[1.0, 0.0], &[true, true], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        assert_eq!(softmax_masked(&[3.0], &[true], 0.07).unwrap(), vec![1.0]);
        let p = classify(&[vec![1.0, 2.0], vec![1.0, 2.0]], &[0.3, -0.1], &[true, true], 0.07).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(matches!(softmax_masked(&[1.0], &[false], 1.0), Err(VipError::Inference(_))));
    }

    #[test]
    fn masked_and_zero_rows_get_zero() {
        let p = classify(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 1.0]], &[1.0, 1.0], &[true, true, false], 0.07).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&[0.1, 0.7, 0.2], &[0, 1, 2]), vec![1, 2, 0]);
        assert_eq!(rank(&[0.25; 4], &[0, 1, 2, 3]), vec![0, 1, 2, 3]);
        assert_eq!(rank(&[0.5, 0.5], &[7, 3]), vec![3, 7]);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_rank(&[0.1, 0.9, 0.3, 0.2], 1, &[true; 4]), 1.0);
        assert_eq!(percentile_rank(&[0.2, 0.5, 0.9], 1, &[true; 3]), 0.5);
        assert_eq!(percentile_rank(&[0.4; 4], 2, &[true; 4]), 0.0);
        assert_eq!(percentile_rank(&[0.4, 0.9], 0, &[true, false]), 1.0);
    }

    fn ranks(v: [f64; 5]) -> BTreeMap<Cue, f64> {
        Cue::ALL.iter().copied().zip(v).collect()
    }

    #[test]
    fn rationale_examples() {
        let r = make_rationale(&ranks([0.9, 0.5, 0.7, 0.8, 0.1]), 0.7);
        assert_eq!(r.template_text, "The person holds central prominence and engages in continuous active speech.");
        assert_eq!(make_rationale(&ranks([0.7; 5]), 0.7).template_text, FALLBACK_RATIONALE);
        let all = make_rationale(&ranks([1.0; 5]), 0.7);
        assert_eq!(
            all.template_text,
            "The person holds central prominence, occupies a dominant share of the frame, appears in sharp focus, \
             engages in continuous active speech and performs salient physical actions."
        );
    }

    fn selection_sort_oracle(p: &[f64]) -> Vec<u32> {
        let mut left: Vec<usize> = (0..p.len()).collect();
        let mut out = vec![];
        while !left.is_empty() {
            let mut best = 0;
            for j in 1..left.len() {
                if p[left[j]] > p[left[best]] {
                    best = j;
                }
            }
            out.push(left.remove(best) as u32);
        }
        out
    }

    proptest! {
        #[test]
        fn rank_agrees_with_selection_sort(p in prop::collection::vec(0u8..5, 1..7)) {
            let p: Vec<f64> = p.into_iter().map(|x| x as f64 / 4.0).collect();
            let ids: Vec<u32> = (0..p.len() as u32).collect();
            prop_assert_eq!(rank(&p, &ids), selection_sort_oracle(&p));
        }

        #[test]
        fn percentile_matches_pairwise_count(s in prop::collection::vec(0u8..4, 2..7), vip in 0usize..6, mask in prop::collection::vec(any::<bool>(), 6)) {
            let n = s.len();
            let vip = vip % n;
            let mut valid = mask[..n].to_vec();
            valid[vip] = true;
            let s: Vec<f64> = s.into_iter().map(f64::from).collect();
            let mut below = 0;
            let mut total = 0;
            for m in 0..n {
                if m != vip && valid[m] {
                    total += 1;
                    if s[m] < s[vip] { below += 1; }
                }
            }
            let expect = if total == 0 { 1.0 } else { below as f64 / total as f64 };
            prop_assert_eq!(percentile_rank(&s, vip, &valid), expect);
        }

        #[test]
        fn temperature_keeps_argmax_and_sharpens(h in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..6), w in prop::collection::vec(-1.0f64..1.0, 4), t1 in 0.01f64..5.0, t2 in 0.01f64..5.0) {
            let valid = vec![true; h.len()];
            let a = classify(&h, &w, &valid, t1).unwrap();
            let b = classify(&h, &w, &valid, t2).unwrap();
            let ids: Vec<u32> = (0..h.len() as u32).collect();
            prop_assert_eq!(rank(&a, &ids)[0], rank(&b, &ids)[0]);
            let (lo, hi) = if t1 <= t2 { (&a, &b) } else { (&b, &a) };
            let max = |v: &Vec<f64>| v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(max(lo) >= max(hi) - 1e-12);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn rationale_retention_rule(v in prop::array::uniform5(0u8..=20)) {
            let r = ranks(v.map(|x| x as f64 * 0.05));
            let out = make_rationale(&r, 0.7);
            let kept: Vec<Cue> = out.retained_cues.iter().map(|c| c.cue).collect();
            let expect: Vec<Cue> = Cue::ALL.iter().copied().filter(|c| r[c] > 0.7).collect();
            prop_assert_eq!(kept, expect);
            prop_assert_eq!(out.template_text.clone(), make_rationale(&r, 0.7).template_text);
        }
    }
}

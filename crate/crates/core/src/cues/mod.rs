//! Social cue encoder: spatial cues (centrality, area, clarity), temporal
//! cues (action, lip), contextual text, and the lift of scalar cues into
//! D-dimensional embeddings.

pub mod action;
pub mod lip;
pub mod spatial;
pub mod text;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::data::{Clip, PersonTrack, ValidityMask};
use crate::error::{Result, VipError};
use crate::nn::Init;
use crate::tensor::Mat;

use action::{action_from_crops, action_from_energy, ActionSeries};
use lip::LipSequence;
use spatial::GrayImage;

/// The five scalar cues, in rationale order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Centrality,
    Area,
    Clarity,
    Lip,
    Action,
}

impl Cue {
    pub const ALL: [Cue; 5] = [Cue::Centrality, Cue::Area, Cue::Clarity, Cue::Lip, Cue::Action];
    pub const SPATIAL: [Cue; 3] = [Cue::Centrality, Cue::Area, Cue::Clarity];
    pub const TEMPORAL: [Cue; 2] = [Cue::Action, Cue::Lip];

    pub fn as_str(self) -> &'static str {
        match self {
            Cue::Centrality => "centrality",
            Cue::Area => "area",
            Cue::Clarity => "clarity",
            Cue::Lip => "lip",
            Cue::Action => "action",
        }
    }

    pub fn parse(s: &str) -> Option<Cue> {
        Cue::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Spatial,
    Temporal,
}

/// Parameter-free per-clip cue inputs. Rows are persons in clip order,
/// columns frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub person_ids: Vec<u32>,
    pub num_frames: usize,
    /// `present` and a non-degenerate box.
    pub mask: ValidityMask,
    pub centrality: Vec<Vec<f64>>,
    pub area: Vec<Vec<f64>>,
    pub clarity: Vec<Vec<f64>>,
    pub action: Vec<ActionSeries>,
    pub lip: Vec<LipSequence>,
    pub text: String,
}

impl ClipFeatures {
    pub fn num_persons(&self) -> usize {
        self.person_ids.len()
    }

    /// The per-frame series of a spatial cue or of action.
    pub fn series(&self, cue: Cue) -> Option<Vec<Vec<f64>>> {
        match cue {
            Cue::Centrality => Some(self.centrality.clone()),
            Cue::Area => Some(self.area.clone()),
            Cue::Clarity => Some(self.clarity.clone()),
            Cue::Action => Some(self.action.iter().map(|a| a.per_frame.clone()).collect()),
            Cue::Lip => None,
        }
    }

    /// Mean of a per-frame series over each person's valid frames (action uses
    /// its block mean); persons without valid frames score 0.
    pub fn person_score(&self, cue: Cue, n: usize) -> Option<f64> {
        if cue == Cue::Action {
            return Some(self.action[n].score);
        }
        let s = match cue {
            Cue::Centrality => &self.centrality[n],
            Cue::Area => &self.area[n],
            Cue::Clarity => &self.clarity[n],
            _ => return None,
        };
        Some(valid_mean(s, &self.mask.frame_valid[n]))
    }

    /// Keeps frames `[start, start + len)`; used for temporally jittered views.
    pub fn crop_frames(&self, start: usize, len: usize) -> ClipFeatures {
        let r = start..start + len;
        let cut = |v: &Vec<Vec<f64>>| v.iter().map(|s| s[r.clone()].to_vec()).collect::<Vec<_>>();
        let frame_valid: Vec<Vec<bool>> = self.mask.frame_valid.iter().map(|f| f[r.clone()].to_vec()).collect();
        let action = self
            .action
            .iter()
            .zip(&frame_valid)
            .map(|(a, fv)| {
                let per_frame = a.per_frame[r.clone()].to_vec();
                let mut blocks: Vec<f64> = Vec::new();
                let mut last = None;
                for (v, ok) in per_frame.iter().zip(fv) {
                    if *ok && last != Some(*v) {
                        blocks.push(*v);
                        last = Some(*v);
                    }
                }
                let score = if blocks.is_empty() { 0.0 } else { blocks.iter().sum::<f64>() / blocks.len() as f64 };
                ActionSeries { per_frame, score }
            })
            .collect();
        let lip = self
            .lip
            .iter()
            .map(|l| {
                let rows: Vec<f64> = r.clone().flat_map(|t| l.features.row(t).to_vec()).collect();
                LipSequence { features: Mat::from_vec(len, 2, rows), valid: l.valid[r.clone()].to_vec() }
            })
            .collect();
        ClipFeatures {
            clip_id: self.clip_id.clone(),
            person_ids: self.person_ids.clone(),
            num_frames: len,
            mask: ValidityMask::from_frames(frame_valid),
            centrality: cut(&self.centrality),
            area: cut(&self.area),
            clarity: cut(&self.clarity),
            action,
            lip,
            text: self.text.clone(),
        }
    }

    /// Reorders persons by `perm` (new row `i` is old row `perm[i]`).
    pub fn permute(&self, perm: &[usize]) -> ClipFeatures {
        let pick = |v: &Vec<Vec<f64>>| perm.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        ClipFeatures {
            clip_id: self.clip_id.clone(),
            person_ids: perm.iter().map(|&i| self.person_ids[i]).collect(),
            num_frames: self.num_frames,
            mask: ValidityMask::from_frames(perm.iter().map(|&i| self.mask.frame_valid[i].clone()).collect()),
            centrality: pick(&self.centrality),
            area: pick(&self.area),
            clarity: pick(&self.clarity),
            action: perm.iter().map(|&i| self.action[i].clone()).collect(),
            lip: perm.iter().map(|&i| self.lip[i].clone()).collect(),
            text: self.text.clone(),
        }
    }
}

pub(crate) fn valid_mean(s: &[f64], valid: &[bool]) -> f64 {
    let (sum, n) = s.iter().zip(valid).filter(|(_, v)| **v).fold((0.0, 0usize), |(a, n), (x, _)| (a + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `present` and a non-degenerate box, per frame.
pub fn frame_ok(clip: &Clip, p: &PersonTrack) -> Vec<bool> {
    (0..clip.num_frames).map(|f| p.present[f] && spatial::clamp_box(&p.boxes[f], clip.width, clip.height).is_some()).collect()
}

/// Per-frame clarity from the precomputed channel, else from the frames.
pub fn clarity_series(clip: &Clip, p: &PersonTrack, ok: &[bool], cfg: &ModelConfig) -> Result<Vec<f64>> {
    let (t, w, h) = (clip.num_frames, clip.width, clip.height);
    if let Some(c) = &p.clarity {
        Ok((0..t).map(|f| if ok[f] { c[f] as f64 } else { 0.0 }).collect())
    } else if let Some(fr) = &clip.frames {
        Ok((0..t)
            .map(|f| {
                if !ok[f] {
                    return 0.0;
                }
                let face = p.face_boxes.as_ref().map(|fb| &fb[f]);
                spatial::face_region(&p.boxes[f], face, w, h, cfg.face_fallback).map_or(0.0, |r| spatial::clarity(fr, f, r))
            })
            .collect())
    } else {
        Err(VipError::Config(format!(
            "clip {} person {}: clarity needs frames or a precomputed clarity channel",
            clip.clip_id, p.person_id
        )))
    }
}

/// Computes every parameter-free cue of a clip. Clarity and action use the
/// precomputed channels when present, otherwise the frames; neither being
/// available is a configuration error.
pub fn extract_features(clip: &Clip, cfg: &ModelConfig) -> Result<ClipFeatures> {
    let (t, w, h) = (clip.num_frames, clip.width, clip.height);
    if t > cfg.max_frames {
        return Err(VipError::Config(format!(
            "clip {} has {t} frames, more than max_frames {}",
            clip.clip_id, cfg.max_frames
        )));
    }
    let provider = cfg.action_provider.build(cfg.seed);
    let mut out = ClipFeatures {
        clip_id: clip.clip_id.clone(),
        person_ids: clip.person_ids(),
        num_frames: t,
        mask: ValidityMask::from_frames(vec![]),
        centrality: vec![],
        area: vec![],
        clarity: vec![],
        action: vec![],
        lip: vec![],
        text: clip.context_text(),
    };
    let mut frame_valid = Vec::with_capacity(clip.persons.len());
    for p in &clip.persons {
        let ok = frame_ok(clip, p);
        let cen = (0..t).map(|f| if ok[f] { spatial::centrality(&p.boxes[f], w, h).unwrap_or(0.0) } else { 0.0 });
        let area = (0..t).map(|f| if ok[f] { spatial::area(&p.boxes[f], w, h).unwrap_or(0.0) } else { 0.0 });
        out.centrality.push(cen.collect());
        out.area.push(area.collect());

        out.clarity.push(clarity_series(clip, p, &ok, cfg)?);

        let action = if let Some(m) = &p.motion_energy {
            let e: Vec<f64> = m.iter().map(|v| *v as f64).collect();
            action_from_energy(&e, &ok, cfg.action_block)
        } else if let Some(fr) = &clip.frames {
            let crops: Vec<Option<GrayImage>> = (0..t)
                .map(|f| {
                    ok[f].then(|| {
                        let r = spatial::clamp_box(&p.boxes[f], w, h).expect("valid box");
                        GrayImage::resampled(fr, f, r, cfg.action_crop)
                    })
                })
                .collect();
            action_from_crops(provider.as_ref(), &crops, cfg.action_block)
        } else {
            return Err(VipError::Config(format!(
                "clip {} person {}: action needs frames or a precomputed motion_energy channel",
                clip.clip_id, p.person_id
            )));
        };
        out.action.push(action);
        out.lip.push(lip::lip_sequence(p, &ok, h, cfg.lip_mode, cfg.lip_scale));
        frame_valid.push(ok);
    }
    out.mask = ValidityMask::from_frames(frame_valid);
    Ok(out)
}

pub(crate) fn register_lift(init: &mut Init, cfg: &ModelConfig) {
    for c in Cue::ALL {
        init.weight(&format!("lift.{}.w", c.as_str()), 1, cfg.dim);
        init.zeros(&format!("lift.{}.b", c.as_str()), 1, cfg.dim);
    }
}

/// `mask ⊙ (s·w_k + b_k)` for a `T × 1` series, giving `T × D`.
pub fn lift(g: &mut Graph, cue: Cue, series: Var, mask: Var) -> Var {
    let w = g.param_named(&format!("lift.{}.w", cue.as_str()));
    let b = g.param_named(&format!("lift.{}.b", cue.as_str()));
    let y = g.matmul(series, w);
    let y = g.add_row(y, b);
    g.mul_col(y, mask)
}

pub(crate) fn mask_col(valid: &[bool]) -> Mat {
    Mat::col_vec(&valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect::<Vec<_>>())
}

/// Lifted per-person `T × D` embeddings of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct CueTensor {
    pub modality: Modality,
    /// One entry per sub-cue; each holds one `T × D` matrix per person.
    pub sub_cues: Vec<(Cue, Vec<Mat>)>,
    pub mask: ValidityMask,
}

impl CueTensor {
    pub fn all_finite(&self) -> bool {
        self.sub_cues.iter().all(|(_, m)| m.iter().all(Mat::all_finite))
    }
}

//! Lip salience: decayed aperture sequence through a positional-attention
//! temporal encoder, reduced to a non-negative per-frame value.

use crate::autodiff::{Graph, Var};
use crate::config::{LipMode, ModelConfig};
use crate::data::PersonTrack;
use crate::nn::{self, Init};
use crate::tensor::Mat;

/// Inverse softplus of 1, so the learned decay starts at λ_t = 1.
pub const DECAY_INIT: f64 = 0.541_324_854_612_918_1;

/// Per-frame componentwise lip feature (`T × 2`) and its validity.
#[derive(Debug, Clone, PartialEq)]
pub struct LipSequence {
    pub features: Mat,
    pub valid: Vec<bool>,
}

impl LipSequence {
    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// `|p_upper − p_lower|` per component, divided by the frame height and
/// multiplied by `scale`. Frames that are absent, lack anchors or carry
/// non-finite anchors are invalid and hold zeros.
pub fn lip_sequence(track: &PersonTrack, frame_ok: &[bool], height: u32, mode: LipMode, scale: f64) -> LipSequence {
    let t = frame_ok.len();
    let mut ap = Mat::zeros(t, 2);
    let mut valid = vec![false; t];
    let Some(points) = &track.lip_points else {
        return LipSequence { features: ap, valid };
    };
    let norm = scale / height.max(1) as f64;
    for f in 0..t {
        let [up, lo] = points[f];
        if frame_ok[f] && up.iter().chain(lo.iter()).all(|v| v.is_finite()) {
            valid[f] = true;
            ap.set(f, 0, (up[0] as f64 - lo[0] as f64).abs() * norm);
            ap.set(f, 1, (up[1] as f64 - lo[1] as f64).abs() * norm);
        }
    }
    match mode {
        LipMode::Aperture => LipSequence { features: ap, valid },
        LipMode::InterFrame => {
            let mut d = Mat::zeros(t, 2);
            let mut dv = vec![false; t];
            for f in 1..t {
                if valid[f] && valid[f - 1] {
                    dv[f] = true;
                    for c in 0..2 {
                        d.set(f, c, (ap.get(f, c) - ap.get(f - 1, c)).abs());
                    }
                }
            }
            LipSequence { features: d, valid: dv }
        }
    }
}

pub(crate) fn register(init: &mut Init, cfg: &ModelConfig) {
    init.filled("lip.decay.raw", 1, cfg.max_frames, DECAY_INIT);
    init.weight("lip.in.w", 2, cfg.lip_dim);
    for p in ["q", "k", "v", "o"] {
        init.weight(&format!("lip.attn.{p}.w"), cfg.lip_dim, cfg.lip_dim);
    }
    init.weight("lip.out.w", cfg.lip_dim, 1);
}

/// Per-frame salience `l_t ≥ 0` as a `T × 1` graph value, zero on invalid
/// frames. Sequences with fewer than two valid frames yield all zeros.
///
/// The decayed sequence is projected without bias, values come from the
/// input while queries and keys come from sinusoidal positions only, and the
/// read-out is bias-free; the encoder is therefore linear in its input, so a
/// zero sequence maps to zero and scaling the sequence scales `|z|`.
pub fn lip_series(g: &mut Graph, cfg: &ModelConfig, seq: &LipSequence) -> Var {
    let t = seq.valid.len();
    let valid_col = Mat::col_vec(&seq.valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    if seq.num_valid() < 2 {
        return g.input(Mat::zeros(t, 1));
    }
    assert!(t <= cfg.max_frames, "clip of {t} frames exceeds max_frames {}", cfg.max_frames);
    let a = g.input(seq.features.clone());
    let raw = g.param_named("lip.decay.raw");
    let raw = g.slice_cols(raw, 0, t);
    let lam = g.softplus(raw);
    let lam = g.transpose(lam);
    let x = g.mul_col(a, lam);
    let x = nn::dense(g, "lip.in", x, false);
    let pos = g.input(nn::sinusoidal_positions(t, cfg.lip_dim));
    let q = nn::dense(g, "lip.attn.q", pos, false);
    let k = nn::dense(g, "lip.attn.k", pos, false);
    let v = nn::dense(g, "lip.attn.v", x, false);
    let (o, _) = nn::attend(g, q, k, v, 1, &seq.valid, false);
    let o = nn::dense(g, "lip.attn.o", o, false);
    let y = g.add(x, o);
    let z = nn::dense(g, "lip.out", y, false);
    let l = g.smooth_abs(z, cfg.lip_eps);
    let m = g.input(valid_col);
    g.mul_col(l, m)
}

/// Mean of a per-frame series over valid frames; 0 with fewer than two.
pub fn lip_score(series: &Mat, valid: &[bool]) -> f64 {
    let vals: Vec<f64> = valid.iter().enumerate().filter(|(_, v)| **v).map(|(t, _)| series.get(t, 0)).collect();
    if vals.len() < 2 {
        return 0.0;
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

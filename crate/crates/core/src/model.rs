//! The full network: cue lifting, rectifier and classification head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::cues::{self, lip, text, ClipFeatures, Cue, CueTensor, Modality};
use crate::error::Result;
use crate::nn::Init;
use crate::params::ParamStore;
use crate::rectifier::{self, RectifierOutput};
use crate::tensor::Mat;

#[derive(Debug, Clone)]
pub struct VipNet {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Graph handles produced by one forward pass over a clip.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `N × D` relation-enhanced person embeddings.
    pub h: Var,
    /// `T × 1` lip salience per person.
    pub lip: Vec<Var>,
    pub text: Option<Var>,
    /// Lifted cues indexed `[person][sub-cue]`, spatial order centrality,
    /// area, clarity; temporal order action, lip.
    pub spatial: Vec<Vec<Var>>,
    pub temporal: Vec<Vec<Var>>,
    pub rect: RectifierOutput,
}

impl VipNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.check()?;
        let mut params = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        {
            let mut init = Init { store: &mut params, rng: &mut rng };
            text::register(&mut init, &config);
            lip::register(&mut init, &config);
            cues::register_lift(&mut init, &config);
            rectifier::register(&mut init, &config);
            init.weight("cls.w", config.dim, 1);
        }
        Ok(Self { config, params })
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.params)
    }

    pub fn forward(&self, g: &mut Graph, f: &ClipFeatures) -> ForwardPass {
        let cfg = &self.config;
        let n = f.num_persons();
        let mut spatial = Vec::with_capacity(n);
        let mut temporal = Vec::with_capacity(n);
        let mut lip_vars = Vec::with_capacity(n);
        for i in 0..n {
            let valid = &f.mask.frame_valid[i];
            let mask = g.input(cues::mask_col(valid));
            let mut s = Vec::with_capacity(3);
            for (cue, series) in [(Cue::Centrality, &f.centrality[i]), (Cue::Area, &f.area[i]), (Cue::Clarity, &f.clarity[i])] {
                let x = g.input(Mat::col_vec(series));
                s.push(cues::lift(g, cue, x, mask));
            }
            let act = g.input(Mat::col_vec(&f.action[i].per_frame));
            let act = cues::lift(g, Cue::Action, act, mask);
            let l = lip::lip_series(g, cfg, &f.lip[i]);
            let lip_lifted = cues::lift(g, Cue::Lip, l, mask);
            spatial.push(s);
            temporal.push(vec![act, lip_lifted]);
            lip_vars.push(l);
        }
        let text = text::encode_text(g, cfg, &f.text);
        let rect = rectifier::rectify(g, cfg, &spatial, &temporal, &f.mask.frame_valid, text);
        ForwardPass { h: rect.h, lip: lip_vars, text, spatial, temporal, rect }
    }

    /// Lip score per person (mean salience over valid frames) from a pass.
    pub fn lip_scores(&self, g: &Graph, pass: &ForwardPass, f: &ClipFeatures) -> Vec<f64> {
        pass.lip.iter().zip(&f.lip).map(|(v, s)| lip::lip_score(g.value(*v), &s.valid)).collect()
    }

    /// Reads the lifted cues of a pass back as values.
    pub fn cue_tensors(&self, g: &Graph, pass: &ForwardPass, f: &ClipFeatures) -> (CueTensor, CueTensor) {
        let collect = |vars: &Vec<Vec<Var>>, k: usize| vars.iter().map(|p| g.value(p[k]).clone()).collect::<Vec<_>>();
        let spatial = CueTensor {
            modality: Modality::Spatial,
            sub_cues: Cue::SPATIAL.iter().enumerate().map(|(k, c)| (*c, collect(&pass.spatial, k))).collect(),
            mask: f.mask.clone(),
        };
        let temporal = CueTensor {
            modality: Modality::Temporal,
            sub_cues: Cue::TEMPORAL.iter().enumerate().map(|(k, c)| (*c, collect(&pass.temporal, k))).collect(),
            mask: f.mask.clone(),
        };
        (spatial, temporal)
    }
}

/// Persons that can receive probability: valid and with a non-zero
/// embedding.
pub fn scorable(h: &Mat, person_valid: &[bool]) -> Vec<bool> {
    person_valid.iter().enumerate().map(|(i, v)| *v && h.row(i).iter().any(|x| *x != 0.0)).collect()
}

/// Log-probabilities `1 × N` of `softmax((h_n·w_c)/(τ_c‖h_n‖))` over
/// scorable persons; everyone else gets `-inf`.
pub fn classify_log_probs(g: &mut Graph, h: Var, person_valid: &[bool], tau_c: f64) -> Var {
    let mask = scorable(g.value(h), person_valid);
    let hn = g.normalize_rows(h);
    let w = g.param_named("cls.w");
    let z = g.matmul(hn, w);
    let z = g.scale(z, 1.0 / tau_c);
    let z = g.transpose(z);
    g.masked_log_softmax(z, &mask)
}

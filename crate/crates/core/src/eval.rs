//! Rank-k metrics, heuristic baselines, description similarity and reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{fingerprint, InferenceConfig, ModelConfig};
use crate::cues::text::{cosine, SentenceEmbedder};
use crate::cues::{self, spatial, valid_mean, Cue};
use crate::data::{Category, Clip, Split};
use crate::error::{Result, VipError};
use crate::inference::{make_rationale, predict, rank, GuidanceMode, ImportanceResult};
use crate::model::VipNet;
use crate::refine::{refine_rationale, RefinementClient};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fraction of samples whose truth is among the first `k` ranked ids.
pub fn rank_k_accuracy(predictions: &[Vec<u32>], truths: &[u32], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(VipError::Argument("k must be at least 1".into()));
    }
    if predictions.len() != truths.len() {
        return Err(VipError::Argument(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    if predictions.is_empty() {
        return Err(VipError::Argument("no samples".into()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p.iter().take(k).any(|x| x == *t)).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Cues a heuristic baseline can rank by.
pub const BASELINE_CUES: [Cue; 3] = [Cue::Centrality, Cue::Area, Cue::Clarity];

/// Mean per-frame cue over each person's valid frames.
pub fn baseline_scores(clip: &Clip, cue: Cue, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let (w, h) = (clip.width, clip.height);
    clip.persons
        .iter()
        .map(|p| {
            let ok = cues::frame_ok(clip, p);
            let series: Vec<f64> = match cue {
                Cue::Centrality => p.boxes.iter().map(|b| spatial::centrality(b, w, h).unwrap_or(0.0)).collect(),
                Cue::Area => p.boxes.iter().map(|b| spatial::area(b, w, h).unwrap_or(0.0)).collect(),
                Cue::Clarity => cues::clarity_series(clip, p, &ok, cfg)?,
                other => return Err(VipError::Argument(format!("no heuristic baseline for cue {}", other.as_str()))),
            };
            Ok(valid_mean(&series, &ok))
        })
        .collect()
}

/// Persons by descending mean cue; ties and persons without valid frames by
/// ascending id, the latter after everyone valid.
pub fn heuristic_baseline(clip: &Clip, cue: Cue, cfg: &ModelConfig) -> Result<Vec<u32>> {
    let scores = baseline_scores(clip, cue, cfg)?;
    let keyed: Vec<f64> = clip
        .persons
        .iter()
        .zip(&scores)
        .map(|(p, s)| if cues::frame_ok(clip, p).iter().any(|v| *v) { *s } else { f64::NEG_INFINITY })
        .collect();
    Ok(rank(&keyed, &clip.person_ids()))
}

/// Mean and population variance of per-sample cosine similarity.
pub fn description_similarity(pred: &[String], truth: &[String], embedder: &dyn SentenceEmbedder) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(VipError::Argument(format!("{} predicted texts for {} references", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Ok((0.0, 0.0));
    }
    let sims: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| cosine(&embedder.embed(p), &embedder.embed(t))).collect();
    Ok(mean_var(&sims))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub count: usize,
    pub rank1: f64,
    pub rank2: f64,
    pub rank3: f64,
}

impl RankStats {
    pub fn from_rankings(predictions: &[Vec<u32>], truths: &[u32]) -> Result<Self> {
        Ok(Self {
            count: truths.len(),
            rank1: rank_k_accuracy(predictions, truths, 1)?,
            rank2: rank_k_accuracy(predictions, truths, 2)?,
            rank3: rank_k_accuracy(predictions, truths, 3)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptionStats {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub predictor: String,
    pub split: Option<Split>,
    pub count: usize,
    pub rank1: f64,
    pub rank2: f64,
    pub rank3: f64,
    pub per_category: BTreeMap<Category, RankStats>,
    pub indoor: Option<RankStats>,
    /// Similarity to the reference rationale per guidance mode, over
    /// correctly predicted clips.
    pub description: BTreeMap<GuidanceMode, DescriptionStats>,
    pub baselines: BTreeMap<String, RankStats>,
    pub fingerprint: String,
}

pub enum Predictor<'a> {
    Model { net: &'a VipNet, inference: InferenceConfig },
    Baseline { cue: Cue, config: ModelConfig },
}

impl Predictor<'_> {
    pub fn name(&self) -> String {
        match self {
            Predictor::Model { .. } => "vipnet".into(),
            Predictor::Baseline { cue, .. } => format!("max-{}", cue.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Restrict to one split; `None` keeps every clip.
    pub split: Option<Split>,
    pub indoor: Vec<Category>,
    pub baselines: bool,
    pub description_modes: Vec<GuidanceMode>,
    #[serde(skip)]
    pub overlay_dir: Option<PathBuf>,
    /// Frames per clip drawn into overlays.
    pub overlay_frames: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: None,
            indoor: Category::default_indoor(),
            baselines: true,
            description_modes: vec![GuidanceMode::Baseline, GuidanceMode::Unguided, GuidanceMode::Guided],
            overlay_dir: None,
            overlay_frames: 1,
        }
    }
}

fn baseline_config(p: &Predictor) -> ModelConfig {
    match p {
        Predictor::Model { net, .. } => net.config.clone(),
        Predictor::Baseline { config, .. } => config.clone(),
    }
}

pub fn evaluate(
    predictor: &Predictor,
    clips: &[Clip],
    opts: &EvalOptions,
    client: Option<&dyn RefinementClient>,
    embedder: &dyn SentenceEmbedder,
) -> Result<EvalReport> {
    let set: Vec<&Clip> = clips.iter().filter(|c| opts.split.is_none_or(|s| c.split == s)).collect();
    if set.is_empty() {
        return Err(VipError::Argument(format!(
            "no clips in split {}",
            opts.split.map_or("any", |s| s.as_str())
        )));
    }
    let truths: Vec<u32> = set.iter().map(|c| c.vip_person_id).collect();
    let results: Vec<Option<ImportanceResult>> = match predictor {
        Predictor::Model { net, inference } => {
            set.par_iter().map(|c| predict(net, c, inference).map(Some)).collect::<Result<_>>()?
        }
        Predictor::Baseline { .. } => vec![None; set.len()],
    };
    let rankings: Vec<Vec<u32>> = match predictor {
        Predictor::Model { .. } => results.iter().map(|r| r.as_ref().expect("model result").ranked_ids.clone()).collect(),
        Predictor::Baseline { cue, config } => {
            set.par_iter().map(|c| heuristic_baseline(c, *cue, config)).collect::<Result<_>>()?
        }
    };
    let overall = RankStats::from_rankings(&rankings, &truths)?;
    let subset = |keep: &dyn Fn(&Clip) -> bool| -> Result<Option<RankStats>> {
        let idx: Vec<usize> = (0..set.len()).filter(|&i| keep(set[i])).collect();
        if idx.is_empty() {
            return Ok(None);
        }
        let p: Vec<Vec<u32>> = idx.iter().map(|&i| rankings[i].clone()).collect();
        let t: Vec<u32> = idx.iter().map(|&i| truths[i]).collect();
        RankStats::from_rankings(&p, &t).map(Some)
    };
    let mut per_category = BTreeMap::new();
    for cat in Category::ALL {
        if let Some(s) = subset(&|c: &Clip| c.category == cat)? {
            per_category.insert(cat, s);
        }
    }
    let indoor = subset(&|c: &Clip| opts.indoor.contains(&c.category))?;

    let mut description = BTreeMap::new();
    if let (Predictor::Model { inference, .. }, Some(client)) = (predictor, client) {
        let correct: Vec<usize> = (0..set.len()).filter(|&i| rankings[i][0] == truths[i]).collect();
        for mode in &opts.description_modes {
            let texts: Vec<String> = correct
                .iter()
                .map(|&i| {
                    let r = results[i].as_ref().expect("model result");
                    let rat = make_rationale(&r.per_cue_rank, inference.tau_m);
                    let rat = refine_rationale(client, &set[i].clip_id, r.vip_id, rat, *mode);
                    rat.refined_text.unwrap_or(rat.template_text)
                })
                .collect();
            let refs: Vec<String> = correct.iter().map(|&i| set[i].rationale_text.clone()).collect();
            let (mean, variance) = description_similarity(&texts, &refs, embedder)?;
            description.insert(*mode, DescriptionStats { count: texts.len(), mean, variance });
        }
    }

    let mut baselines = BTreeMap::new();
    if opts.baselines {
        let cfg = baseline_config(predictor);
        for cue in BASELINE_CUES {
            let r: Result<Vec<Vec<u32>>> = set.par_iter().map(|c| heuristic_baseline(c, cue, &cfg)).collect();
            match r {
                Ok(r) => {
                    baselines.insert(format!("max-{}", cue.as_str()), RankStats::from_rankings(&r, &truths)?);
                }
                Err(VipError::Config(m)) => log::warn!("baseline max-{} skipped: {m}", cue.as_str()),
                Err(e) => return Err(e),
            }
        }
    }

    if let Some(dir) = &opts.overlay_dir {
        fs::create_dir_all(dir).map_err(|e| VipError::io(dir, e))?;
        for (c, r) in set.iter().zip(&rankings) {
            write_overlays(c, r[0], dir, opts.overlay_frames)?;
        }
    }

    let ids: Vec<&str> = set.iter().map(|c| c.clip_id.as_str()).collect();
    let fp = match predictor {
        Predictor::Model { net, inference } => fingerprint(&(&net.config, inference, opts, &ids, net.params.sum_squares().to_bits())),
        Predictor::Baseline { cue, config } => fingerprint(&(cue, config, opts, &ids)),
    };
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        predictor: predictor.name(),
        split: opts.split,
        count: set.len(),
        rank1: overall.rank1,
        rank2: overall.rank2,
        rank3: overall.rank3,
        per_category,
        indoor,
        description,
        baselines,
        fingerprint: fp,
    })
}

/// Draws every person box on the first `frames` frames, the predicted VIP in
/// red, and writes `{clip_id}_{frame}.png`.
pub fn write_overlays(clip: &Clip, vip_id: u32, dir: &Path, frames: usize) -> Result<Vec<PathBuf>> {
    let (w, h) = (clip.width, clip.height);
    let mut out = Vec::new();
    for t in 0..frames.min(clip.num_frames) {
        let mut img = RgbImage::from_fn(w, h, |x, y| match &clip.frames {
            Some(f) => Rgb(f.rgb(t, y as usize, x as usize)),
            None => Rgb([40, 40, 40]),
        });
        for p in &clip.persons {
            if !p.present[t] {
                continue;
            }
            let Some(b) = spatial::clamp_box(&p.boxes[t], w, h) else { continue };
            let (color, thick) = if p.person_id == vip_id { ([230, 30, 30], 3) } else { ([220, 220, 220], 1) };
            draw_rect(&mut img, b, Rgb(color), thick);
        }
        let path = dir.join(format!("{}_{t}.png", clip.clip_id));
        img.save(&path).map_err(|e| VipError::Format(format!("{}: {e}", path.display())))?;
        out.push(path);
    }
    Ok(out)
}

fn draw_rect(img: &mut RgbImage, b: [f64; 4], c: Rgb<u8>, thick: u32) {
    let (w, h) = img.dimensions();
    let x0 = (b[0].floor() as u32).min(w - 1);
    let y0 = (b[1].floor() as u32).min(h - 1);
    let x1 = (b[2].ceil() as u32).clamp(1, w) - 1;
    let y1 = (b[3].ceil() as u32).clamp(1, h) - 1;
    for k in 0..thick {
        for x in x0..=x1 {
            for y in [y0.saturating_add(k).min(y1), y1.saturating_sub(k).max(y0)] {
                img.put_pixel(x, y, c);
            }
        }
        for y in y0..=y1 {
            for x in [x0.saturating_add(k).min(x1), x1.saturating_sub(k).max(x0)] {
                img.put_pixel(x, y, c);
            }
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn report_json(report: &EvalReport) -> Result<String> {
    serde_json::to_string_pretty(report).map(|s| s + "\n").map_err(|e| VipError::json("report", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::simple_clip;
    use crate::synth::{make_corpus, CorpusOptions, Profile};
    use proptest::prelude::*;

    struct Fixed;

    impl SentenceEmbedder for Fixed {
        fn embed(&self, text: &str) -> Vec<f64> {
            if text.starts_with('a') {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        }
    }

    #[test]
    fn rank_k_examples() {
        let p = vec![vec![1, 2, 3]; 3];
        assert_eq!(rank_k_accuracy(&p, &[1, 1, 1], 1).unwrap(), 1.0);
        assert_eq!(rank_k_accuracy(&p, &[3, 2, 1], 3).unwrap(), 1.0);
        assert!((rank_k_accuracy(&p, &[1, 2, 3], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(rank_k_accuracy(&p, &[1, 2, 3], 0), Err(VipError::Argument(_))));
    }

    #[test]
    fn description_examples() {
        let a = vec!["a x".to_string(), "b y".to_string()];
        assert_eq!(description_similarity(&a, &a, &Fixed).unwrap(), (1.0, 0.0));
        let b = vec!["b x".to_string(), "a y".to_string()];
        assert_eq!(description_similarity(&a, &b, &Fixed).unwrap(), (0.0, 0.0));
        let c = vec!["a z".to_string(), "a w".to_string()];
        assert_eq!(description_similarity(&a, &c, &Fixed).unwrap(), (0.5, 0.25));
        assert!(matches!(description_similarity(&a, &c[..1], &Fixed), Err(VipError::Argument(_))));
    }

    #[test]
    fn identical_boxes_rank_by_id() {
        let mut clip = simple_clip(4, 6);
        let b = clip.persons[0].boxes.clone();
        for p in &mut clip.persons {
            p.boxes = b.clone();
        }
        clip.persons.reverse();
        for cue in BASELINE_CUES {
            assert_eq!(heuristic_baseline(&clip, cue, &ModelConfig::default()).unwrap(), vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn clarity_without_a_source_is_a_config_error() {
        let mut clip = simple_clip(2, 6);
        for p in &mut clip.persons {
            p.clarity = None;
        }
        assert!(matches!(heuristic_baseline(&clip, Cue::Clarity, &ModelConfig::default()), Err(VipError::Config(_))));
        assert!(heuristic_baseline(&clip, Cue::Centrality, &ModelConfig::default()).is_ok());
    }

    #[test]
    fn spatial_profile_centrality_is_perfect() {
        let opts = CorpusOptions { profile: Profile::Spatial, ..CorpusOptions::default() };
        let clips: Vec<Clip> = make_corpus(40, [0.0, 1.0, 0.0], 4, &opts).unwrap().into_iter().map(|c| c.0).collect();
        let p = Predictor::Baseline { cue: Cue::Centrality, config: ModelConfig::default() };
        let r = evaluate(&p, &clips, &EvalOptions { split: Some(Split::Val), ..EvalOptions::default() }, None, &Fixed).unwrap();
        assert_eq!(r.rank1, 1.0);
        assert_eq!(r.count, 40);
        assert!(r.rank1 <= r.rank2 && r.rank2 <= r.rank3);
        assert_eq!(r.per_category.values().map(|s| s.count).sum::<usize>(), 40);
        let again = evaluate(&p, &clips, &EvalOptions { split: Some(Split::Val), ..EvalOptions::default() }, None, &Fixed).unwrap();
        assert_eq!(report_json(&r).unwrap(), report_json(&again).unwrap());
        let empty = evaluate(&p, &clips, &EvalOptions { split: Some(Split::Test), ..EvalOptions::default() }, None, &Fixed);
        assert!(matches!(empty, Err(VipError::Argument(_))));
    }

    #[test]
    fn overlays_are_named_by_clip_and_frame() {
        let clip = simple_clip(2, 4);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_overlays(&clip, 1, dir.path(), 2).unwrap();
        let names: Vec<String> = paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, vec![format!("{}_0.png", clip.clip_id), format!("{}_1.png", clip.clip_id)]);
        let img = image::open(&paths[0]).unwrap().to_rgb8();
        let b = spatial::clamp_box(&clip.persons[1].boxes[0], clip.width, clip.height).unwrap();
        assert_eq!(img.get_pixel(b[0] as u32 + 5, b[1] as u32).0, [230, 30, 30]);
    }

    fn brute_force(scores: &[f64], ids: &[u32]) -> Vec<u32> {
        let mut out = Vec::new();
        let mut left: Vec<usize> = (0..scores.len()).collect();
        while !left.is_empty() {
            let mut best = left[0];
            for &i in &left {
                if scores[i] > scores[best] || (scores[i] == scores[best] && ids[i] < ids[best]) {
                    best = i;
                }
            }
            out.push(ids[best]);
            left.retain(|&i| i != best);
        }
        out
    }

    proptest! {
        #[test]
        fn baseline_agrees_with_exhaustive_oracle(seed in 0u64..400, n in 2usize..=6) {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let spec = crate::synth::random_spec(Profile::Mixed, seed, n, &CorpusOptions::default(), &mut rng);
            let (clip, _) = crate::synth::synthesize(&spec).unwrap();
            let cfg = ModelConfig::default();
            for cue in BASELINE_CUES {
                let s = baseline_scores(&clip, cue, &cfg).unwrap();
                let oracle: Vec<f64> = clip.persons.iter().map(|p| {
                    let vals: Vec<f64> = (0..clip.num_frames).filter(|&t| p.present[t]).map(|t| match cue {
                        Cue::Centrality => spatial::centrality(&p.boxes[t], clip.width, clip.height).unwrap(),
                        Cue::Area => spatial::area(&p.boxes[t], clip.width, clip.height).unwrap(),
                        _ => p.clarity.as_ref().unwrap()[t] as f64,
                    }).collect();
                    if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 }
                }).collect();
                for (a, b) in s.iter().zip(&oracle) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                prop_assert_eq!(heuristic_baseline(&clip, cue, &cfg).unwrap(), brute_force(&oracle, &clip.person_ids()));
            }
        }

        #[test]
        fn rank_k_is_monotone(rankings in proptest::collection::vec(Just(vec![0u32, 1, 2, 3]).prop_shuffle(), 1..20), seed in 0u32..4) {
            let truths: Vec<u32> = (0..rankings.len() as u32).map(|i| (i + seed) % 4).collect();
            let mut prev = 0.0;
            for k in 1..=4 {
                let r = rank_k_accuracy(&rankings, &truths, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}

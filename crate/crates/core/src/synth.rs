//! Synthetic multi-person clips with scripted dominance schedules and a
//! known importance oracle.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cues::{spatial, Cue};
use crate::data::{Category, Clip, Frames, PersonTrack, Split};
use crate::error::{Result, VipError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Speech,
    Gesture,
    Spatial,
}

impl Channel {
    pub fn cue(self) -> Cue {
        match self {
            Channel::Speech => Cue::Lip,
            Channel::Gesture => Cue::Action,
            Channel::Spatial => Cue::Centrality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub person: u32,
    pub channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelWeights {
    pub speech: f64,
    pub gesture: f64,
    pub spatial: f64,
}

impl Default for ChannelWeights {
    fn default() -> Self {
        Self { speech: 1.0, gesture: 0.8, spatial: 0.5 }
    }
}

impl ChannelWeights {
    pub fn get(&self, c: Channel) -> f64 {
        match c {
            Channel::Speech => self.speech,
            Channel::Gesture => self.gesture,
            Channel::Spatial => self.spatial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub num_persons: usize,
    pub num_frames: usize,
    pub schedule: Vec<Interval>,
    pub noise_level: f64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub category: Category,
    /// Person kept near the frame centre outside spatial intervals.
    pub central_decoy: Option<u32>,
    /// Render frames and derive clarity and motion from pixels.
    pub pixels: bool,
    pub weights: ChannelWeights,
}

impl ScenarioSpec {
    pub fn new(seed: u64, num_persons: usize, num_frames: usize, schedule: Vec<Interval>) -> Self {
        Self {
            seed,
            num_persons,
            num_frames,
            schedule,
            noise_level: 1.0,
            width: 320,
            height: 180,
            fps: 6.0,
            category: Category::Office,
            central_decoy: None,
            pixels: false,
            weights: ChannelWeights::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(VipError::Spec(m));
        if !(2..=8).contains(&self.num_persons) {
            return bad(format!("num_persons {} outside [2, 8]", self.num_persons));
        }
        if self.num_frames == 0 || self.width == 0 || self.height == 0 || !(self.fps > 0.0) {
            return bad("num_frames, width, height and fps must be positive".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise_level {} must be finite and >= 0", self.noise_level));
        }
        let mut cursor = 0;
        for iv in &self.schedule {
            if iv.start != cursor || iv.end <= iv.start {
                return bad(format!("schedule must tile [0, {}) without gaps or overlap; bad interval {iv:?}", self.num_frames));
            }
            if iv.person as usize >= self.num_persons {
                return bad(format!("dominant person {} not < num_persons {}", iv.person, self.num_persons));
            }
            cursor = iv.end;
        }
        if cursor != self.num_frames {
            return bad(format!("schedule covers [0, {cursor}) but the clip has {} frames", self.num_frames));
        }
        if let Some(d) = self.central_decoy {
            if d as usize >= self.num_persons {
                return bad(format!("central_decoy {d} not < num_persons"));
            }
        }
        Ok(())
    }

    fn dominant(&self, t: usize) -> &Interval {
        self.schedule.iter().find(|iv| iv.start <= t && t < iv.end).expect("schedule covers every frame")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLabel {
    pub vip_person_id: u32,
    pub per_cue_truth: BTreeMap<Cue, Vec<f64>>,
    pub rationale_cues: Vec<Cue>,
    /// Weighted dominance duration per person.
    pub dominance: Vec<f64>,
}

/// Weighted dominance per person and its argmax (ties to the lowest id).
pub fn oracle_vip(spec: &ScenarioSpec) -> (u32, Vec<f64>) {
    let mut w = vec![0.0; spec.num_persons];
    for iv in &spec.schedule {
        w[iv.person as usize] += (iv.end - iv.start) as f64 * spec.weights.get(iv.channel);
    }
    let mut best = 0;
    for (i, v) in w.iter().enumerate() {
        if *v > w[best] {
            best = i;
        }
    }
    (best as u32, w)
}

fn truth_phrase(cue: Cue) -> &'static str {
    match cue {
        Cue::Lip => "carries most of the speech in the conversation",
        Cue::Action => "makes the most visible gestures and actions",
        Cue::Centrality => "moves to a central position in the shot",
        Cue::Area => "takes up a large part of the view",
        Cue::Clarity => "is shown in clear focus",
    }
}

/// Reference rationale written for a set of dominated channels.
pub fn truth_rationale(cues: &[Cue]) -> String {
    let phrases: Vec<&str> = cues.iter().map(|c| truth_phrase(*c)).collect();
    if phrases.is_empty() {
        return "In this clip, the person is the one the others attend to throughout the scene.".into();
    }
    format!(
        "In this clip, the person {}, and the others attend to them throughout the scene.",
        crate::inference::join_clauses(&phrases)
    )
}

const COLORS: [&str; 8] = ["red", "blue", "green", "grey", "black", "white", "yellow", "brown"];
const RING_MIN: f64 = 0.22;
const RING_MAX: f64 = 0.38;

struct Walker {
    angle: f64,
    radius: f64,
    half_w: f64,
    half_h: f64,
    clarity: f64,
    phase: f64,
}

/// Generates one clip and its oracle. Deterministic in `spec`.
pub fn synthesize(spec: &ScenarioSpec) -> Result<(Clip, OracleLabel)> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, t) = (spec.num_persons, spec.num_frames);
    let (wf, hf) = (spec.width as f64, spec.height as f64);
    let noise = spec.noise_level;
    let offset: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut walkers: Vec<Walker> = (0..n)
        .map(|i| Walker {
            angle: offset + std::f64::consts::TAU * i as f64 / n as f64 + rng.random_range(-0.3..0.3),
            radius: rng.random_range(RING_MIN..RING_MAX),
            half_w: rng.random_range(0.04..0.09),
            half_h: rng.random_range(0.06..0.10),
            clarity: rng.random_range(0.1..1.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let decoy_radius = rng.random_range(0.0..0.06);

    let mut persons: Vec<PersonTrack> = (0..n)
        .map(|i| PersonTrack {
            person_id: i as u32,
            description: format!("a person in a {} shirt", COLORS[rng.random_range(0..COLORS.len())]),
            boxes: Vec::with_capacity(t),
            present: vec![true; t],
            face_boxes: None,
            lip_points: Some(Vec::with_capacity(t)),
            clarity: Some(Vec::with_capacity(t)),
            motion_energy: Some(Vec::with_capacity(t)),
        })
        .collect();
    // Normalised centre offsets per person and frame.
    let mut centres = vec![vec![(0.0, 0.0); t]; n];
    let mut spatial_age = vec![0usize; n];
    for f in 0..t {
        let dom = *spec.dominant(f);
        for (i, w) in walkers.iter_mut().enumerate() {
            w.angle += noise * rng.random_range(-0.05..0.05);
            w.radius = (w.radius + noise * rng.random_range(-0.004..0.004)).clamp(RING_MIN, RING_MAX);
            let mut r = w.radius;
            if spec.central_decoy == Some(i as u32) {
                r = decoy_radius;
            }
            if dom.channel == Channel::Spatial && dom.person == i as u32 {
                let alpha = 1.0 - 0.5f64.powi(spatial_age[i] as i32 + 1);
                r *= 1.0 - alpha.min(0.95);
                spatial_age[i] += 1;
            } else {
                spatial_age[i] = 0;
            }
            centres[i][f] = (r * w.angle.cos(), r * w.angle.sin());
        }
    }
    for (i, w) in walkers.iter().enumerate() {
        let p = &mut persons[i];
        for f in 0..t {
            let (ox, oy) = centres[i][f];
            let jitter = 1.0 + 0.03 * noise * rng.random_range(-1.0..1.0);
            let (hw, hh) = (w.half_w * jitter, w.half_h * jitter);
            let (cx, cy) = ((0.5 + ox) * wf, (0.5 + oy) * hf);
            let b = [(cx - hw * wf) as f32, (cy - hh * hf) as f32, (cx + hw * wf) as f32, (cy + hh * hf) as f32];
            p.boxes.push(b);

            let dom = spec.dominant(f);
            let speaking = dom.channel == Channel::Speech && dom.person == i as u32;
            let aperture = if speaking {
                0.05 * hf * (0.6 + 0.4 * (0.9 * f as f64 + w.phase).sin().abs())
            } else {
                0.01 * hf * rng.random_range(0.0..1.0)
            };
            let (mx, my) = (cx, cy - 0.5 * hh * hf);
            p.lip_points.as_mut().unwrap().push([
                [mx as f32, (my - aperture / 2.0) as f32],
                [mx as f32, (my + aperture / 2.0) as f32],
            ]);

            let gesturing = dom.channel == Channel::Gesture && dom.person == i as u32;
            let energy = if gesturing {
                0.5 + 0.5 * (1.3 * f as f64 + w.phase).sin().abs()
            } else {
                0.1 * rng.random_range(0.0..1.0)
            };
            p.motion_energy.as_mut().unwrap().push(energy as f32);
            let c = (w.clarity * (1.0 + 0.05 * noise * rng.random_range(-1.0..1.0))).max(0.0);
            p.clarity.as_mut().unwrap().push(c as f32);
        }
    }

    let (vip, dominance) = oracle_vip(spec);
    let mut per_cue_truth = BTreeMap::new();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cen: Vec<f64> = persons
        .iter()
        .map(|p| mean(&p.boxes.iter().map(|b| spatial::centrality(b, spec.width, spec.height).unwrap_or(0.0)).collect::<Vec<_>>()))
        .collect();
    let area: Vec<f64> = persons
        .iter()
        .map(|p| mean(&p.boxes.iter().map(|b| spatial::area(b, spec.width, spec.height).unwrap_or(0.0)).collect::<Vec<_>>()))
        .collect();
    let clar: Vec<f64> = persons.iter().map(|p| mean(&p.clarity.as_ref().unwrap().iter().map(|c| *c as f64).collect::<Vec<_>>())).collect();
    let lip: Vec<f64> = persons
        .iter()
        .map(|p| mean(&p.lip_points.as_ref().unwrap().iter().map(|l| (l[1][1] - l[0][1]).abs() as f64 / hf).collect::<Vec<_>>()))
        .collect();
    let act: Vec<f64> =
        persons.iter().map(|p| mean(&p.motion_energy.as_ref().unwrap().iter().map(|e| *e as f64).collect::<Vec<_>>())).collect();
    per_cue_truth.insert(Cue::Centrality, cen);
    per_cue_truth.insert(Cue::Area, area);
    per_cue_truth.insert(Cue::Clarity, clar);
    per_cue_truth.insert(Cue::Lip, lip);
    per_cue_truth.insert(Cue::Action, act);

    let mut rationale_cues: Vec<Cue> = spec.schedule.iter().filter(|iv| iv.person == vip).map(|iv| iv.channel.cue()).collect();
    rationale_cues.sort();
    rationale_cues.dedup();

    let frames = spec.pixels.then(|| render(spec, &persons, &mut rng));
    if frames.is_some() {
        for p in &mut persons {
            p.clarity = None;
            p.motion_energy = None;
        }
    }
    let clip = Clip {
        clip_id: format!("synth-{}", spec.seed),
        category: spec.category,
        fps: Some(spec.fps),
        num_frames: t,
        width: spec.width,
        height: spec.height,
        frames,
        persons,
        scene_description: format!("a {} scene with {n} people", spec.category.as_str().replace('_', " ")),
        vip_person_id: vip,
        rationale_text: truth_rationale(&rationale_cues),
        split: Split::Train,
    };
    Ok((clip, OracleLabel { vip_person_id: vip, per_cue_truth, rationale_cues, dominance }))
}

/// Flat grey background; each person is a filled box whose face band carries
/// a checkerboard with contrast set by its clarity, a dark mouth slit between
/// the lip anchors, and body noise scaled by motion energy.
fn render(spec: &ScenarioSpec, persons: &[PersonTrack], rng: &mut ChaCha8Rng) -> Frames {
    let (t, h, w) = (spec.num_frames, spec.height as usize, spec.width as usize);
    let mut fr = Frames::new(t, h, w);
    fr.data.iter_mut().for_each(|v| *v = 128);
    for f in 0..t {
        for (i, p) in persons.iter().enumerate() {
            let b = p.boxes[f];
            let Some(c) = spatial::clamp_box(&b, spec.width, spec.height) else { continue };
            let (x0, y0, x1, y1) = (c[0] as usize, c[1] as usize, (c[2] as usize).min(w), (c[3] as usize).min(h));
            let face_end = y0 + ((y1 - y0) as f64 * 0.3) as usize;
            let clarity = p.clarity.as_ref().map_or(0.5, |v| v[f] as f64).min(1.0);
            let energy = p.motion_energy.as_ref().map_or(0.0, |v| v[f] as f64).min(1.0);
            let base = 60.0 + 20.0 * i as f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = if y < face_end {
                        let check = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                        150.0 + check * 60.0 * clarity
                    } else {
                        base + energy * rng.random_range(-60.0..60.0)
                    };
                    let v = v.clamp(0.0, 255.0) as u8;
                    fr.set_rgb(f, y, x, [v, v, v]);
                }
            }
            if let Some(l) = &p.lip_points {
                let [up, lo] = l[f];
                let mx = up[0].round() as i64;
                for y in (up[1].round() as i64)..=(lo[1].round() as i64) {
                    for x in mx - 2..=mx + 2 {
                        if (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                            fr.set_rgb(f, y as usize, x as usize, [10, 10, 10]);
                        }
                    }
                }
            }
        }
    }
    fr
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Spatial,
    Speech,
    Gesture,
    Mixed,
    /// Speech dominance where a non-dominant person stays central.
    Decoy,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Profile> {
        match s {
            "spatial" => Some(Profile::Spatial),
            "speech" => Some(Profile::Speech),
            "gesture" => Some(Profile::Gesture),
            "mixed" => Some(Profile::Mixed),
            "decoy" => Some(Profile::Decoy),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Spatial => "spatial",
            Profile::Speech => "speech",
            Profile::Gesture => "gesture",
            Profile::Mixed => "mixed",
            Profile::Decoy => "decoy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusOptions {
    pub profile: Profile,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub noise_level: f64,
    pub pixels: bool,
    pub weights: ChannelWeights,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            profile: Profile::Mixed,
            num_frames: 24,
            width: 320,
            height: 180,
            fps: 6.0,
            noise_level: 1.0,
            pixels: false,
            weights: ChannelWeights::default(),
        }
    }
}

/// Person-count strata and their relative frequency (three persons most
/// common).
pub const STRATA: [(usize, f64); 4] = [(2, 0.2), (3, 0.35), (4, 0.25), (5, 0.2)];

/// Integer counts proportional to `weights` summing to `total`
/// (largest remainder, ties to the earlier entry).
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Cut `[0, t)` into `k` contiguous pieces of at least `min_len` frames.
fn cut_points(rng: &mut ChaCha8Rng, t: usize, k: usize, min_len: usize) -> Vec<(usize, usize)> {
    let k = k.min(t / min_len.max(1)).max(1);
    let slack = t - k * min_len;
    let mut extra: Vec<usize> = (0..k - 1).map(|_| rng.random_range(0..=slack)).collect();
    extra.push(0);
    extra.push(slack);
    extra.sort();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = min_len + extra[i + 1] - extra[i];
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Draws a schedule for one clip of the given profile.
pub fn random_spec(profile: Profile, seed: u64, n: usize, opts: &CorpusOptions, rng: &mut ChaCha8Rng) -> ScenarioSpec {
    let t = opts.num_frames;
    let pick = |rng: &mut ChaCha8Rng, exclude: Option<u32>| loop {
        let p = rng.random_range(0..n as u32);
        if Some(p) != exclude {
            break p;
        }
    };
    let mut decoy = None;
    let schedule = match profile {
        Profile::Spatial | Profile::Speech | Profile::Gesture => {
            let ch = match profile {
                Profile::Spatial => Channel::Spatial,
                Profile::Speech => Channel::Speech,
                _ => Channel::Gesture,
            };
            let k = if ch == Channel::Spatial { 1 } else { rng.random_range(1..=2) };
            let mut prev = None;
            cut_points(rng, t, k, 3)
                .into_iter()
                .map(|(s, e)| {
                    let p = pick(rng, prev);
                    prev = Some(p);
                    Interval { start: s, end: e, person: p, channel: ch }
                })
                .collect()
        }
        Profile::Mixed => {
            let k = rng.random_range(2..=3);
            let channels = [Channel::Speech, Channel::Gesture, Channel::Spatial];
            cut_points(rng, t, k, 3)
                .into_iter()
                .map(|(s, e)| Interval { start: s, end: e, person: pick(rng, None), channel: channels[rng.random_range(0..3)] })
                .collect()
        }
        Profile::Decoy => {
            let d = rng.random_range(0..n as u32);
            decoy = Some(d);
            let k = rng.random_range(1..=2);
            let mut prev = None;
            cut_points(rng, t, k, 3)
                .into_iter()
                .map(|(s, e)| {
                    let p = loop {
                        let p = pick(rng, Some(d));
                        if Some(p) != prev || n == 2 {
                            break p;
                        }
                    };
                    prev = Some(p);
                    Interval { start: s, end: e, person: p, channel: Channel::Speech }
                })
                .collect()
        }
    };
    ScenarioSpec {
        seed,
        num_persons: n,
        num_frames: t,
        schedule,
        noise_level: opts.noise_level,
        width: opts.width,
        height: opts.height,
        fps: opts.fps,
        category: Category::ALL[rng.random_range(0..Category::ALL.len())],
        central_decoy: decoy,
        pixels: opts.pixels,
        weights: opts.weights,
    }
}

/// A stratified, seeded corpus with exact split counts.
pub fn make_corpus(count: usize, split_ratios: [f64; 3], seed: u64, opts: &CorpusOptions) -> Result<Vec<(Clip, OracleLabel)>> {
    if count < STRATA.len() {
        return Err(VipError::Spec(format!("count {count} is smaller than the {} person-count strata", STRATA.len())));
    }
    if split_ratios.iter().any(|r| !(*r >= 0.0)) || (split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(VipError::Spec(format!("split ratios {split_ratios:?} must be non-negative and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = apportion(count, &STRATA.map(|s| s.1));
    let mut sizes: Vec<usize> = STRATA.iter().zip(&strata).flat_map(|((n, _), c)| std::iter::repeat_n(*n, *c)).collect();
    sizes.shuffle(&mut rng);
    let splits = apportion(count, &split_ratios);
    let split_of = |i: usize| {
        if i < splits[0] {
            Split::Train
        } else if i < splits[0] + splits[1] {
            Split::Val
        } else {
            Split::Test
        }
    };
    let mut out = Vec::with_capacity(count);
    for (i, n) in sizes.into_iter().enumerate() {
        let clip_seed: u64 = rng.random();
        let spec = random_spec(opts.profile, clip_seed, n, opts, &mut rng);
        let (mut clip, label) = synthesize(&spec)?;
        clip.clip_id = format!("{}-{seed}-{i:05}", opts.profile.as_str());
        clip.split = split_of(i);
        out.push((clip, label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_clip;

    fn iv(start: usize, end: usize, person: u32, channel: Channel) -> Interval {
        Interval { start, end, person, channel }
    }

    #[test]
    fn spatial_interval_makes_the_dominant_person_central() {
        let spec = ScenarioSpec::new(3, 2, 20, vec![iv(0, 20, 0, Channel::Spatial)]);
        let (clip, label) = synthesize(&spec).unwrap();
        assert_eq!(label.vip_person_id, 0);
        assert_eq!(clip.vip_person_id, 0);
        let c = &label.per_cue_truth[&Cue::Centrality];
        assert!(c[0] > c[1]);
        assert!(validate_clip(&clip).is_empty());
    }

    #[test]
    fn speech_handover_oracle_is_weighted_duration() {
        let spec = ScenarioSpec::new(1, 3, 20, vec![iv(0, 8, 0, Channel::Speech), iv(8, 20, 2, Channel::Speech)]);
        let (vip, w) = oracle_vip(&spec);
        assert_eq!(vip, 2);
        assert_eq!(w, vec![8.0, 0.0, 12.0]);
        let other = ScenarioSpec { seed: 2, ..spec.clone() };
        let (a, la) = synthesize(&spec).unwrap();
        let (b, lb) = synthesize(&other).unwrap();
        assert_eq!(la.vip_person_id, lb.vip_person_id);
        assert_ne!(a.persons[0].boxes, b.persons[0].boxes);
        assert_eq!(synthesize(&spec).unwrap().0, a);
    }

    #[test]
    fn ties_go_to_the_lowest_id() {
        let spec = ScenarioSpec::new(1, 3, 10, vec![iv(0, 5, 2, Channel::Gesture), iv(5, 10, 1, Channel::Gesture)]);
        assert_eq!(oracle_vip(&spec).0, 1);
    }

    #[test]
    fn invalid_schedules_are_spec_errors() {
        let gap = ScenarioSpec::new(1, 2, 10, vec![iv(0, 4, 0, Channel::Speech), iv(5, 10, 1, Channel::Speech)]);
        let short = ScenarioSpec::new(1, 2, 10, vec![iv(0, 9, 0, Channel::Speech)]);
        let who = ScenarioSpec::new(1, 2, 10, vec![iv(0, 10, 2, Channel::Speech)]);
        for s in [gap, short, who] {
            assert!(matches!(synthesize(&s), Err(VipError::Spec(_))));
        }
    }

    #[test]
    fn speech_and_spatial_posts_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for profile in [Profile::Speech, Profile::Spatial, Profile::Mixed, Profile::Decoy] {
            for k in 0..40 {
                let n = 2 + k % 4;
                let spec = random_spec(profile, k as u64, n, &CorpusOptions::default(), &mut rng);
                let (clip, label) = synthesize(&spec).unwrap();
                assert!(validate_clip(&clip).is_empty());
                assert_eq!(clip.vip_person_id, label.vip_person_id);
                if profile == Profile::Decoy {
                    assert_ne!(Some(label.vip_person_id), spec.central_decoy);
                }
                for iv in &spec.schedule {
                    let d = iv.person as usize;
                    match iv.channel {
                        Channel::Speech => {
                            let amp = |p: usize, f: usize| {
                                let l = clip.persons[p].lip_points.as_ref().unwrap()[f];
                                (l[1][1] - l[0][1]).abs()
                            };
                            let dom_min = (iv.start..iv.end).map(|f| amp(d, f)).fold(f32::INFINITY, f32::min);
                            for p in (0..n).filter(|p| *p != d) {
                                let other_max = (iv.start..iv.end).map(|f| amp(p, f)).fold(0.0, f32::max);
                                assert!(dom_min >= 3.0 * other_max);
                            }
                        }
                        Channel::Spatial => {
                            let cen = |p: usize, f: usize| spatial::centrality(&clip.persons[p].boxes[f], clip.width, clip.height).unwrap();
                            let wins = (iv.start..iv.end).filter(|&f| (0..n).filter(|p| *p != d).all(|p| cen(d, f) > cen(p, f))).count();
                            assert!(wins as f64 >= 0.9 * (iv.end - iv.start) as f64);
                        }
                        Channel::Gesture => {}
                    }
                }
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_stratified_and_split_exactly() {
        let opts = CorpusOptions::default();
        let a = make_corpus(100, [0.6, 0.2, 0.2], 7, &opts).unwrap();
        let b = make_corpus(100, [0.6, 0.2, 0.2], 7, &opts).unwrap();
        let ids = |c: &[(Clip, OracleLabel)]| c.iter().map(|(c, l)| (c.clip_id.clone(), l.vip_person_id)).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        let count = |s: Split| a.iter().filter(|(c, _)| c.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (60, 20, 20));
        let mut hist = BTreeMap::new();
        for (c, _) in &a {
            *hist.entry(c.persons.len()).or_insert(0) += 1;
        }
        let mode = hist.iter().max_by_key(|(_, v)| **v).unwrap().0;
        assert_eq!(*mode, 3);
        assert!(matches!(make_corpus(3, [1.0, 0.0, 0.0], 1, &opts), Err(VipError::Spec(_))));
        assert!(matches!(make_corpus(10, [0.5, 0.2, 0.2], 1, &opts), Err(VipError::Spec(_))));
    }

    #[test]
    fn rendered_clips_take_the_pixel_path() {
        let mut spec = ScenarioSpec::new(5, 3, 24, vec![iv(0, 24, 1, Channel::Gesture)]);
        spec.pixels = true;
        let (clip, _) = synthesize(&spec).unwrap();
        assert!(clip.frames.is_some() && clip.persons[0].clarity.is_none());
        assert!(validate_clip(&clip).is_empty());
        let f = crate::cues::extract_features(&clip, &crate::config::ModelConfig::default()).unwrap();
        assert!(f.action[1].score > f.action[0].score && f.action[1].score > f.action[2].score);
        assert!(f.clarity.iter().all(|c| c.iter().all(|v| *v > 0.0)));
    }
}

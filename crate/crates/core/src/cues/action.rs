//! Action intensity: mean over δ-frame blocks of `‖Φ(block)·W_act‖₂`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spatial::GrayImage;

/// Spatio-temporal feature extractor applied to one block of person crops.
pub trait FeatureProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Feature vector of one block; an empty block yields zeros.
    fn features(&self, block: &[GrayImage]) -> Vec<f64>;
    /// Projection applied to the features, `dim × out`.
    fn projection(&self) -> &[Vec<f64>];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionProviderKind {
    #[default]
    MotionEnergy,
    Conv3d,
}

impl ActionProviderKind {
    pub fn build(self, seed: u64) -> Box<dyn FeatureProvider> {
        match self {
            ActionProviderKind::MotionEnergy => Box::new(MotionEnergy::new()),
            ActionProviderKind::Conv3d => Box::new(RandomConv3d::new(seed, 8)),
        }
    }
}

/// Mean absolute difference between consecutive crops, normalised by crop
/// area. One feature; the projection is the identity.
#[derive(Debug, Clone)]
pub struct MotionEnergy {
    proj: Vec<Vec<f64>>,
}

impl MotionEnergy {
    pub fn new() -> Self {
        Self { proj: vec![vec![1.0]] }
    }
}

impl Default for MotionEnergy {
    fn default() -> Self {
        Self::new()
    }
}

/// Sum of absolute differences between two equally sized crops divided by
/// the crop area.
pub fn frame_difference_energy(a: &GrayImage, b: &GrayImage) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "crop size mismatch");
    let area = (a.width * a.height) as f64;
    if area == 0.0 {
        return 0.0;
    }
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / area
}

impl FeatureProvider for MotionEnergy {
    fn name(&self) -> &str {
        "motion_energy"
    }

    fn dim(&self) -> usize {
        1
    }

    fn features(&self, block: &[GrayImage]) -> Vec<f64> {
        if block.len() < 2 {
            return vec![0.0];
        }
        let total: f64 = block.windows(2).map(|w| frame_difference_energy(&w[0], &w[1])).sum();
        vec![total / (block.len() - 1) as f64]
    }

    fn projection(&self) -> &[Vec<f64>] {
        &self.proj
    }
}

/// A seeded, untrained 3×3×3 convolution bank with ReLU and global average
/// pooling, followed by a random projection.
#[derive(Debug, Clone)]
pub struct RandomConv3d {
    kernels: Vec<[f64; 27]>,
    proj: Vec<Vec<f64>>,
}

impl RandomConv3d {
    pub fn new(seed: u64, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / 27f64.sqrt();
        let kernels = (0..channels)
            .map(|_| std::array::from_fn(|_| rng.random_range(-bound..bound)))
            .collect();
        let pb = 1.0 / (channels as f64).sqrt();
        let proj = (0..channels).map(|_| (0..channels).map(|_| rng.random_range(-pb..pb)).collect()).collect();
        Self { kernels, proj }
    }
}

impl FeatureProvider for RandomConv3d {
    fn name(&self) -> &str {
        "conv3d"
    }

    fn dim(&self) -> usize {
        self.kernels.len()
    }

    fn features(&self, block: &[GrayImage]) -> Vec<f64> {
        let mut out = vec![0.0; self.kernels.len()];
        if block.len() < 3 || block[0].width < 3 || block[0].height < 3 {
            return out;
        }
        let (w, h) = (block[0].width, block[0].height);
        let count = ((block.len() - 2) * (h - 2) * (w - 2)) as f64;
        for (c, k) in self.kernels.iter().enumerate() {
            let mut acc = 0.0;
            for t in 1..block.len() - 1 {
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let mut v = 0.0;
                        let mut i = 0;
                        for img in &block[t - 1..=t + 1] {
                            for yy in y - 1..=y + 1 {
                                for xx in x - 1..=x + 1 {
                                    v += k[i] * img.get(xx, yy);
                                    i += 1;
                                }
                            }
                        }
                        acc += v.max(0.0);
                    }
                }
            }
            out[c] = acc / count;
        }
        out
    }

    fn projection(&self) -> &[Vec<f64>] {
        &self.proj
    }
}

/// `‖Φ(block)·W_act‖₂` for one block.
pub fn block_intensity(provider: &dyn FeatureProvider, block: &[GrayImage]) -> f64 {
    let phi = provider.features(block);
    projected_norm(&phi, provider.projection())
}

pub(crate) fn projected_norm(phi: &[f64], proj: &[Vec<f64>]) -> f64 {
    let out = proj.first().map_or(0, Vec::len);
    let mut y = vec![0.0; out];
    for (p, row) in phi.iter().zip(proj) {
        for (yj, w) in y.iter_mut().zip(row) {
            *yj += p * w;
        }
    }
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Frame ranges `[start, end)` of consecutive δ-frame blocks covering `t`
/// frames. A window shorter than δ yields one truncated block.
pub fn blocks(t: usize, delta: usize) -> Vec<(usize, usize)> {
    let delta = delta.max(1);
    (0..t.div_ceil(delta)).map(|b| (b * delta, ((b + 1) * delta).min(t))).collect()
}

/// Per-frame action series (each frame carries its block's intensity) and the
/// per-person score, the mean over blocks containing at least one valid frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSeries {
    pub per_frame: Vec<f64>,
    pub score: f64,
}

/// Action from pixels: crops of valid frames inside each block are fed to the
/// provider in order.
pub fn action_from_crops(
    provider: &dyn FeatureProvider,
    crops: &[Option<GrayImage>],
    delta: usize,
) -> ActionSeries {
    let mut per_frame = vec![0.0; crops.len()];
    let mut scores = Vec::new();
    for (s, e) in blocks(crops.len(), delta) {
        let block: Vec<GrayImage> = crops[s..e].iter().flatten().cloned().collect();
        if block.is_empty() {
            continue;
        }
        let v = block_intensity(provider, &block);
        per_frame[s..e].iter_mut().for_each(|p| *p = v);
        scores.push(v);
    }
    let score = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    ActionSeries { per_frame, score }
}

/// Action from a precomputed per-frame motion-energy channel: the block
/// feature is the mean energy of its valid frames, projected by the provider
/// of dimension one.
pub fn action_from_energy(energy: &[f64], valid: &[bool], delta: usize) -> ActionSeries {
    let mut per_frame = vec![0.0; energy.len()];
    let mut scores = Vec::new();
    for (s, e) in blocks(energy.len(), delta) {
        let vals: Vec<f64> = (s..e).filter(|&i| valid[i]).map(|i| energy[i]).collect();
        if vals.is_empty() {
            continue;
        }
        let v = (vals.iter().sum::<f64>() / vals.len() as f64).abs();
        per_frame[s..e].iter_mut().for_each(|p| *p = v);
        scores.push(v);
    }
    let score = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    ActionSeries { per_frame, score }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crop(w: usize, h: usize, fill: f64) -> GrayImage {
        let mut g = GrayImage::new(w, h);
        g.data.iter_mut().for_each(|v| *v = fill);
        g
    }

    #[test]
    fn identical_frames_have_zero_motion() {
        let p = MotionEnergy::new();
        let crops: Vec<Option<GrayImage>> = (0..16).map(|_| Some(crop(8, 8, 0.3))).collect();
        let a = action_from_crops(&p, &crops, 8);
        assert_eq!(a.score, 0.0);
        assert!(a.per_frame.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_pixel_change_matches_sad_oracle() {
        let p = MotionEnergy::new();
        for v in [0.1, 0.25, -0.5, 0.9] {
            let a = crop(4, 5, 0.0);
            let mut b = a.clone();
            b.set(2, 3, v);
            let mut sad = 0.0;
            for y in 0..5 {
                for x in 0..4 {
                    sad += (a.get(x, y) - b.get(x, y)).abs();
                }
            }
            let got = block_intensity(&p, &[a, b]);
            assert!((got - sad / 20.0).abs() < 1e-15);
            assert!((got - f64::abs(v) / 20.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_provider_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let crops: Vec<GrayImage> = (0..8)
            .map(|_| {
                let mut g = GrayImage::new(6, 6);
                g.data.iter_mut().for_each(|v| *v = rng.random());
                g
            })
            .collect();
        let a = block_intensity(&RandomConv3d::new(11, 8), &crops);
        let b = block_intensity(&RandomConv3d::new(11, 8), &crops);
        assert_eq!(a, b);
        assert!(a > 0.0);
        assert_ne!(a, block_intensity(&RandomConv3d::new(12, 8), &crops));
    }

    #[test]
    fn short_window_is_one_truncated_block() {
        assert_eq!(blocks(5, 8), vec![(0, 5)]);
        assert_eq!(blocks(17, 8), vec![(0, 8), (8, 16), (16, 17)]);
    }

    #[test]
    fn energy_channel_averages_blocks() {
        let e = [1.0, 1.0, 3.0, 3.0, 5.0];
        let a = action_from_energy(&e, &[true; 5], 2);
        assert_eq!(a.per_frame, vec![1.0, 1.0, 3.0, 3.0, 5.0]);
        assert!((a.score - 3.0).abs() < 1e-12);
        let masked = action_from_energy(&e, &[true, true, false, false, true], 2);
        assert_eq!(masked.per_frame, vec![1.0, 1.0, 0.0, 0.0, 5.0]);
        assert!((masked.score - 3.0).abs() < 1e-12);
    }
}

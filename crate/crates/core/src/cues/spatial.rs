//! Spatial cues: centrality, normalised area and face clarity.

use crate::data::{BBox, Frames};

/// Box clamped to the frame, or `None` when it is degenerate or lies
/// outside the frame.
pub fn clamp_box(b: &BBox, width: u32, height: u32) -> Option<[f64; 4]> {
    if !b.iter().all(|v| v.is_finite()) || b[0] >= b[2] || b[1] >= b[3] || width == 0 || height == 0 {
        return None;
    }
    let (w, h) = (width as f64, height as f64);
    let c = [
        (b[0] as f64).clamp(0.0, w),
        (b[1] as f64).clamp(0.0, h),
        (b[2] as f64).clamp(0.0, w),
        (b[3] as f64).clamp(0.0, h),
    ];
    (c[0] < c[2] && c[1] < c[3]).then_some(c)
}

/// `max(0, 1 − 2‖p − (0.5, 0.5)‖₂)` for the box centroid `p` normalised by
/// the frame size. `None` for a degenerate box.
pub fn centrality(b: &BBox, width: u32, height: u32) -> Option<f64> {
    let c = clamp_box(b, width, height)?;
    let px = 0.5 * (c[0] + c[2]) / width as f64;
    let py = 0.5 * (c[1] + c[3]) / height as f64;
    let d = ((px - 0.5).powi(2) + (py - 0.5).powi(2)).sqrt();
    Some((1.0 - 2.0 * d).max(0.0))
}

/// `(x2 − x1)(y2 − y1) / (W·H)` of the clamped box.
pub fn area(b: &BBox, width: u32, height: u32) -> Option<f64> {
    let c = clamp_box(b, width, height)?;
    Some((c[2] - c[0]) * (c[3] - c[1]) / (width as f64 * height as f64))
}

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel-exact crop of frame `t` over the clamped region.
    pub fn crop(frames: &Frames, t: usize, region: [f64; 4]) -> GrayImage {
        let x0 = region[0].floor().max(0.0) as usize;
        let y0 = region[1].floor().max(0.0) as usize;
        let x1 = (region[2].ceil() as usize).min(frames.width);
        let y1 = (region[3].ceil() as usize).min(frames.height);
        let (w, h) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
        let mut out = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, frames.gray(t, y0 + y, x0 + x));
            }
        }
        out
    }

    /// Nearest-neighbour resample of the region of frame `t` to `size × size`.
    pub fn resampled(frames: &Frames, t: usize, region: [f64; 4], size: usize) -> GrayImage {
        let mut out = GrayImage::new(size, size);
        let (rw, rh) = (region[2] - region[0], region[3] - region[1]);
        for y in 0..size {
            let sy = (region[1] + (y as f64 + 0.5) * rh / size as f64).floor().clamp(0.0, (frames.height - 1) as f64);
            for x in 0..size {
                let sx = (region[0] + (x as f64 + 0.5) * rw / size as f64).floor().clamp(0.0, (frames.width - 1) as f64);
                out.set(x, y, frames.gray(t, sy as usize, sx as usize));
            }
        }
        out
    }
}

/// Population variance of the 3×3 Laplacian response (centre −4, 4-neighbours
/// +1) over the interior of the crop. Crops smaller than 3×3 score 0.
pub fn laplacian_variance(img: &GrayImage) -> f64 {
    if img.width < 3 || img.height < 3 {
        return 0.0;
    }
    let mut resp = Vec::with_capacity((img.width - 2) * (img.height - 2));
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            let v = img.get(x - 1, y) + img.get(x + 1, y) + img.get(x, y - 1) + img.get(x, y + 1) - 4.0 * img.get(x, y);
            resp.push(v);
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Face region used for clarity: the face box when known, otherwise the top
/// `fallback_frac` of the person box.
pub fn face_region(person: &BBox, face: Option<&BBox>, width: u32, height: u32, fallback_frac: f64) -> Option<[f64; 4]> {
    if let Some(f) = face.and_then(|f| clamp_box(f, width, height)) {
        return Some(f);
    }
    let p = clamp_box(person, width, height)?;
    Some([p[0], p[1], p[2], p[1] + fallback_frac * (p[3] - p[1])])
}

/// Laplacian-variance clarity of a face region on frame `t`.
pub fn clarity(frames: &Frames, t: usize, region: [f64; 4]) -> f64 {
    laplacian_variance(&GrayImage::crop(frames, t, region))
}

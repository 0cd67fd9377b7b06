//! Clips, person tracks, validity masks and their on-disk representation.

mod adapter;
mod io;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use adapter::{load_dataset_pair, AdapterKeys};
pub use io::{
    load_clip, load_corpus, read_array, save_clip, write_array, ArrayHeader, DType, LoadedClip, CLIP_FORMAT_VERSION,
};
pub use validate::{validate_clip, Severity, Violation};
pub(crate) use io::{f64_bytes, read_f64};

/// Scene categories of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Office,
    Classroom,
    Conference,
    Restaurant,
    Sports,
    Interview,
    Performance,
    PublicSpace,
    Home,
    Courtroom,
    Laboratory,
}

impl Category {
    pub const ALL: [Category; 11] = [
        Category::Office,
        Category::Classroom,
        Category::Conference,
        Category::Restaurant,
        Category::Sports,
        Category::Interview,
        Category::Performance,
        Category::PublicSpace,
        Category::Home,
        Category::Courtroom,
        Category::Laboratory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Office => "office",
            Category::Classroom => "classroom",
            Category::Conference => "conference",
            Category::Restaurant => "restaurant",
            Category::Sports => "sports",
            Category::Interview => "interview",
            Category::Performance => "performance",
            Category::PublicSpace => "public_space",
            Category::Home => "home",
            Category::Courtroom => "courtroom",
            Category::Laboratory => "laboratory",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Self::ALL.into_iter().find(|c| c.as_str() == norm)
    }

    /// Default membership of the "indoor" evaluation subset.
    pub fn default_indoor() -> Vec<Category> {
        vec![
            Category::Office,
            Category::Classroom,
            Category::Conference,
            Category::Restaurant,
            Category::Home,
            Category::Courtroom,
            Category::Laboratory,
        ]
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Pixel box `(x1, y1, x2, y2)`.
pub type BBox = [f32; 4];

/// Upper and lower lip anchor, each `(x, y)` in pixels.
pub type LipAnchors = [[f32; 2]; 2];

/// Decoded RGB frames, `T × H × W × 3`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Frames {
    pub fn new(num_frames: usize, height: usize, width: usize) -> Self {
        Self { num_frames, height, width, data: vec![0; num_frames * height * width * 3] }
    }

    #[inline]
    fn offset(&self, t: usize, y: usize, x: usize) -> usize {
        ((t * self.height + y) * self.width + x) * 3
    }

    pub fn rgb(&self, t: usize, y: usize, x: usize) -> [u8; 3] {
        let o = self.offset(t, y, x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_rgb(&mut self, t: usize, y: usize, x: usize, rgb: [u8; 3]) {
        let o = self.offset(t, y, x);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Luma in `[0, 1]` (BT.601 weights).
    pub fn gray(&self, t: usize, y: usize, x: usize) -> f64 {
        let [r, g, b] = self.rgb(t, y, x);
        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonTrack {
    pub person_id: u32,
    pub description: String,
    pub boxes: Vec<BBox>,
    pub present: Vec<bool>,
    pub face_boxes: Option<Vec<BBox>>,
    pub lip_points: Option<Vec<LipAnchors>>,
    /// Precomputed per-frame clarity, bypassing the pixel path.
    pub clarity: Option<Vec<f32>>,
    /// Precomputed per-frame motion energy, bypassing the pixel path.
    pub motion_energy: Option<Vec<f32>>,
}

impl PersonTrack {
    /// A track that is absent on every frame.
    pub fn absent(person_id: u32, num_frames: usize) -> Self {
        Self {
            person_id,
            description: String::new(),
            boxes: vec![[0.0; 4]; num_frames],
            present: vec![false; num_frames],
            face_boxes: None,
            lip_points: None,
            clarity: None,
            motion_energy: None,
        }
    }

    pub fn num_present(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub category: Category,
    pub fps: Option<f64>,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub frames: Option<Frames>,
    pub persons: Vec<PersonTrack>,
    pub scene_description: String,
    pub vip_person_id: u32,
    pub rationale_text: String,
    pub split: Split,
}

impl Clip {
    pub fn person_index(&self, person_id: u32) -> Option<usize> {
        self.persons.iter().position(|p| p.person_id == person_id)
    }

    pub fn vip_index(&self) -> Option<usize> {
        self.person_index(self.vip_person_id)
    }

    pub fn person_ids(&self) -> Vec<u32> {
        self.persons.iter().map(|p| p.person_id).collect()
    }

    pub fn duration_secs(&self) -> Option<f64> {
        self.fps.filter(|f| *f > 0.0).map(|f| self.num_frames as f64 / f)
    }

    /// Appends `extra` frames on which nobody is present.
    pub fn pad_frames(&mut self, extra: usize) {
        for p in &mut self.persons {
            p.boxes.extend(std::iter::repeat_n([0.0; 4], extra));
            p.present.extend(std::iter::repeat_n(false, extra));
            if let Some(f) = &mut p.face_boxes {
                f.extend(std::iter::repeat_n([0.0; 4], extra));
            }
            if let Some(l) = &mut p.lip_points {
                l.extend(std::iter::repeat_n([[0.0; 2]; 2], extra));
            }
            if let Some(c) = &mut p.clarity {
                c.extend(std::iter::repeat_n(0.0, extra));
            }
            if let Some(m) = &mut p.motion_energy {
                m.extend(std::iter::repeat_n(0.0, extra));
            }
        }
        if let Some(fr) = &mut self.frames {
            fr.data.extend(std::iter::repeat_n(0, extra * fr.height * fr.width * 3));
            fr.num_frames += extra;
        }
        self.num_frames += extra;
    }

    /// Appends never-present persons until the clip holds `n` tracks.
    pub fn pad_persons(&mut self, n: usize) {
        let mut next = self.persons.iter().map(|p| p.person_id + 1).max().unwrap_or(0);
        while self.persons.len() < n {
            let mut t = PersonTrack::absent(next, self.num_frames);
            if self.persons.iter().any(|p| p.lip_points.is_some()) {
                t.lip_points = Some(vec![[[0.0; 2]; 2]; self.num_frames]);
            }
            if self.persons.iter().any(|p| p.clarity.is_some()) {
                t.clarity = Some(vec![0.0; self.num_frames]);
            }
            if self.persons.iter().any(|p| p.motion_energy.is_some()) {
                t.motion_energy = Some(vec![0.0; self.num_frames]);
            }
            self.persons.push(t);
            next += 1;
        }
    }

    /// Text fed to the contextual encoder: the scene description followed by
    /// every person description.
    pub fn context_text(&self) -> String {
        let mut parts = vec![self.scene_description.trim().to_string()];
        parts.extend(self.persons.iter().map(|p| p.description.trim().to_string()));
        parts.retain(|s| !s.is_empty());
        parts.join(" ")
    }
}

/// Per-person and per-frame validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    pub person_valid: Vec<bool>,
    pub frame_valid: Vec<Vec<bool>>,
}

impl ValidityMask {
    pub fn from_clip(clip: &Clip) -> Self {
        let frame_valid: Vec<Vec<bool>> = clip.persons.iter().map(|p| p.present.clone()).collect();
        Self::from_frames(frame_valid)
    }

    pub fn from_frames(frame_valid: Vec<Vec<bool>>) -> Self {
        let person_valid = frame_valid.iter().map(|f| f.iter().any(|v| *v)).collect();
        Self { person_valid, frame_valid }
    }

    pub fn num_persons(&self) -> usize {
        self.person_valid.len()
    }

    pub fn num_valid_persons(&self) -> usize {
        self.person_valid.iter().filter(|v| **v).count()
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_parse_roundtrip() {
        for c in Category::ALL {
            assert_eq!(Category::parse(c.as_str()), Some(c));
        }
        assert_eq!(Category::parse("Public Space"), Some(Category::PublicSpace));
    }

    #[test]
    fn mask_follows_presence() {
        let mut clip = fixtures::simple_clip(2, 4);
        clip.persons[1].present = vec![false; 4];
        let m = ValidityMask::from_clip(&clip);
        assert_eq!(m.person_valid, vec![true, false]);
        assert_eq!(m.frame_valid[0], vec![true; 4]);
    }

    #[test]
    fn padding_keeps_shapes_consistent() {
        let mut clip = fixtures::simple_clip(2, 4);
        clip.pad_frames(3);
        clip.pad_persons(4);
        assert!(validate_clip(&clip).iter().all(|v| v.severity == Severity::Warning));
        assert_eq!(clip.persons[3].boxes.len(), 7);
        assert_eq!(ValidityMask::from_clip(&clip).person_valid, vec![true, true, false, false]);
    }
}

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BBox, Clip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// One broken invariant, located by field and optionally person and frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub severity: Severity,
    pub field: String,
    pub person: Option<u32>,
    pub frame: Option<usize>,
    pub message: String,
}

impl Violation {
    fn error(field: &str, person: Option<u32>, frame: Option<usize>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, field: field.into(), person, frame, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.field)?;
        if let Some(p) = self.person {
            write!(f, " [person {p}]")?;
        }
        if let Some(t) = self.frame {
            write!(f, " [frame {t}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

const MIN_DURATION_SECS: f64 = 3.0;
const MAX_DURATION_SECS: f64 = 10.0;

/// True when the box has positive extent and still intersects the frame
/// after clamping to `[0, W] × [0, H]`.
pub(crate) fn box_is_valid(b: &BBox, width: u32, height: u32) -> bool {
    if !b.iter().all(|v| v.is_finite()) || b[0] >= b[2] || b[1] >= b[3] {
        return false;
    }
    let (w, h) = (width as f32, height as f32);
    let x1 = b[0].clamp(0.0, w);
    let x2 = b[2].clamp(0.0, w);
    let y1 = b[1].clamp(0.0, h);
    let y2 = b[3].clamp(0.0, h);
    x1 < x2 && y1 < y2
}

/// Checks every clip and track invariant. An empty result means the clip is
/// well formed; duration outside 3–10 s is reported as a warning only.
pub fn validate_clip(clip: &Clip) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = clip.num_frames;
    if t < 1 {
        out.push(Violation::error("num_frames", None, None, "clip must have at least one frame"));
    }
    if clip.width < 1 {
        out.push(Violation::error("width", None, None, "width must be at least 1"));
    }
    if clip.height < 1 {
        out.push(Violation::error("height", None, None, "height must be at least 1"));
    }
    if let Some(fps) = clip.fps {
        if !(fps.is_finite() && fps > 0.0) {
            out.push(Violation::error("fps", None, None, format!("fps must be positive, got {fps}")));
        } else if let Some(d) = clip.duration_secs() {
            if !(MIN_DURATION_SECS..=MAX_DURATION_SECS).contains(&d) {
                out.push(Violation {
                    severity: Severity::Warning,
                    field: "fps".into(),
                    person: None,
                    frame: None,
                    message: format!("duration {d:.2}s outside [{MIN_DURATION_SECS}, {MAX_DURATION_SECS}] s"),
                });
            }
        }
    }
    if let Some(fr) = &clip.frames {
        let expected = (t, clip.height as usize, clip.width as usize);
        if (fr.num_frames, fr.height, fr.width) != expected || fr.data.len() != t * fr.height * fr.width * 3 {
            out.push(Violation::error(
                "frames",
                None,
                None,
                format!(
                    "frames shape {}x{}x{}x3 does not match T={} H={} W={}",
                    fr.num_frames, fr.height, fr.width, expected.0, expected.1, expected.2
                ),
            ));
        }
    }
    if clip.person_index(clip.vip_person_id).is_none() {
        out.push(Violation::error(
            "vip_person_id",
            Some(clip.vip_person_id),
            None,
            format!("vip_person_id {} is not among the persons", clip.vip_person_id),
        ));
    }

    let mut seen = BTreeSet::new();
    for p in &clip.persons {
        let pid = Some(p.person_id);
        if !seen.insert(p.person_id) {
            out.push(Violation::error("person_id", pid, None, "duplicate person id"));
        }
        let lengths: [(&str, Option<usize>); 6] = [
            ("boxes", Some(p.boxes.len())),
            ("present", Some(p.present.len())),
            ("face_boxes", p.face_boxes.as_ref().map(Vec::len)),
            ("lip_points", p.lip_points.as_ref().map(Vec::len)),
            ("clarity", p.clarity.as_ref().map(Vec::len)),
            ("motion_energy", p.motion_energy.as_ref().map(Vec::len)),
        ];
        let mut lengths_ok = true;
        for (field, len) in lengths {
            if let Some(len) = len {
                if len != t {
                    lengths_ok = false;
                    out.push(Violation::error(field, pid, None, format!("track length {len} differs from T={t}")));
                }
            }
        }
        if !lengths_ok {
            continue;
        }
        for f in 0..t {
            if !p.present[f] {
                continue;
            }
            let b = &p.boxes[f];
            if !b.iter().all(|v| v.is_finite()) {
                out.push(Violation::error("boxes", pid, Some(f), "non-finite coordinate"));
            } else if b[0] >= b[2] {
                out.push(Violation::error("boxes", pid, Some(f), format!("x1={} must be < x2={}", b[0], b[2])));
            } else if b[1] >= b[3] {
                out.push(Violation::error("boxes", pid, Some(f), format!("y1={} must be < y2={}", b[1], b[3])));
            } else if !box_is_valid(b, clip.width, clip.height) {
                out.push(Violation::error("boxes", pid, Some(f), "box lies outside the frame"));
            }
            if let Some(c) = &p.clarity {
                if !(c[f].is_finite() && c[f] >= 0.0) {
                    out.push(Violation::error("clarity", pid, Some(f), "clarity must be finite and >= 0"));
                }
            }
            if let Some(m) = &p.motion_energy {
                if !(m[f].is_finite() && m[f] >= 0.0) {
                    out.push(Violation::error("motion_energy", pid, Some(f), "motion energy must be finite and >= 0"));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::simple_clip;
    use crate::data::Frames;

    #[test]
    fn well_formed_clip_has_no_violations() {
        assert!(validate_clip(&simple_clip(3, 24)).is_empty());
    }

    #[test]
    fn missing_vip_is_reported() {
        let mut c = simple_clip(3, 24);
        c.vip_person_id = 9;
        let v = validate_clip(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "vip_person_id");
    }

    #[test]
    fn degenerate_box_names_person_and_frame() {
        let mut c = simple_clip(3, 24);
        c.persons[1].boxes[5] = [10.0, 10.0, 10.0, 50.0];
        let v = validate_clip(&c);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].field.as_str(), v[0].person, v[0].frame), ("boxes", Some(1), Some(5)));
    }

    #[test]
    fn absent_frames_ignore_box_content() {
        let mut c = simple_clip(2, 24);
        c.persons[0].present[3] = false;
        c.persons[0].boxes[3] = [f32::NAN, 0.0, -5.0, 0.0];
        assert!(validate_clip(&c).is_empty());
    }

    // One failing fixture per invariant.
    #[test]
    fn every_invariant_has_a_failing_fixture() {
        let cases: Vec<(&str, Box<dyn Fn(&mut Clip)>)> = vec![
            ("num_frames", Box::new(|c| {
                c.num_frames = 0;
                for p in &mut c.persons {
                    p.boxes.clear();
                    p.present.clear();
                    p.lip_points = None;
                    p.clarity = None;
                    p.motion_energy = None;
                }
                c.fps = None;
            })),
            ("width", Box::new(|c| c.width = 0)),
            ("height", Box::new(|c| c.height = 0)),
            ("vip_person_id", Box::new(|c| c.vip_person_id = 77)),
            ("boxes", Box::new(|c| c.persons[0].boxes.pop().map(|_| ()).unwrap_or(()))),
            ("present", Box::new(|c| c.persons[0].present.push(true))),
            ("boxes", Box::new(|c| c.persons[0].boxes[0] = [50.0, 10.0, 40.0, 20.0])),
            ("boxes", Box::new(|c| c.persons[0].boxes[0] = [10.0, 30.0, 40.0, 20.0])),
            ("boxes", Box::new(|c| c.persons[0].boxes[0] = [400.0, 10.0, 500.0, 20.0])),
            ("lip_points", Box::new(|c| c.persons[0].lip_points.as_mut().unwrap().pop().map(|_| ()).unwrap_or(()))),
            ("person_id", Box::new(|c| c.persons[1].person_id = 0)),
            ("frames", Box::new(|c| c.frames = Some(Frames::new(2, 2, 2)))),
            ("fps", Box::new(|c| c.fps = Some(1.0))),
            ("clarity", Box::new(|c| c.persons[0].clarity.as_mut().unwrap()[2] = -1.0)),
        ];
        for (field, mutate) in cases {
            let mut c = simple_clip(2, 24);
            mutate(&mut c);
            let v = validate_clip(&c);
            assert!(v.iter().any(|x| x.field == field), "expected a `{field}` violation, got {v:?}");
        }
    }
}

//! Read-only adapter for the dataset's paired format: an `.npz` archive of
//! arrays plus a JSON annotation file.
//!
//! The array keys and annotation fields are configurable through
//! [`AdapterKeys`]; the defaults below are the layout this adapter was
//! written against and have not been checked against a released sample.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Category, Clip, Frames, PersonTrack, Split};
use crate::error::{Result, VipError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterKeys {
    /// `T × N × 4` boxes, `(x1, y1, x2, y2)` pixels.
    pub boxes: String,
    /// Optional `T × N` presence flags; when missing, a box with positive
    /// area counts as present.
    pub valid: String,
    /// Optional `T × H × W × 3` frames.
    pub frames: String,
    /// Optional `T × N × 2 × 2` lip anchors.
    pub lips: String,
    pub json_clip_id: String,
    pub json_category: String,
    pub json_fps: String,
    pub json_width: String,
    pub json_height: String,
    pub json_scene: String,
    pub json_persons: String,
    pub json_person_id: String,
    pub json_person_description: String,
    pub json_vip: String,
    pub json_rationale: String,
    pub json_split: String,
}

impl Default for AdapterKeys {
    fn default() -> Self {
        Self {
            boxes: "boxes".into(),
            valid: "valid".into(),
            frames: "frames".into(),
            lips: "lip_points".into(),
            json_clip_id: "video_id".into(),
            json_category: "category".into(),
            json_fps: "fps".into(),
            json_width: "width".into(),
            json_height: "height".into(),
            json_scene: "scene_description".into(),
            json_persons: "persons".into(),
            json_person_id: "person_id".into(),
            json_person_description: "description".into(),
            json_vip: "vip_id".into(),
            json_rationale: "rationale".into(),
            json_split: "split".into(),
        }
    }
}

#[derive(Debug, Clone)]
enum NpyData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone)]
struct NpyArray {
    shape: Vec<usize>,
    data: NpyData,
}

impl NpyArray {
    fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            NpyData::F64(v) => v.clone(),
            NpyData::U8(v) => v.iter().map(|&b| b as f64).collect(),
        }
    }
}

fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pos = header.find(&format!("'{key}'"))?;
    let rest = &header[pos + key.len() + 2..];
    Some(rest.trim_start().trim_start_matches(':').trim_start())
}

/// Parses a `.npy` byte stream (format versions 1–3, C order, little-endian
/// numeric dtypes).
fn parse_npy(name: &str, bytes: &[u8]) -> Result<NpyArray> {
    let bad = |m: &str| VipError::Format(format!("npy `{name}`: {m}"));
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(bad("missing magic"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(bad("truncated header"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(bad(&format!("unsupported version {v}"))),
    };
    let header = std::str::from_utf8(bytes.get(start..start + header_len).ok_or_else(|| bad("truncated header"))?)
        .map_err(|_| bad("header is not utf-8"))?;
    let descr = header_field(header, "descr").ok_or_else(|| bad("no descr"))?;
    let descr = descr.trim_start_matches('\'');
    let descr = &descr[..descr.find('\'').ok_or_else(|| bad("bad descr"))?];
    let fortran = header_field(header, "fortran_order").ok_or_else(|| bad("no fortran_order"))?;
    if fortran.starts_with("True") {
        return Err(bad("fortran-order arrays are not supported"));
    }
    let shape_str = header_field(header, "shape").ok_or_else(|| bad("no shape"))?;
    let open = shape_str.find('(').ok_or_else(|| bad("bad shape"))?;
    let close = shape_str.find(')').ok_or_else(|| bad("bad shape"))?;
    let shape: Vec<usize> = shape_str[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
        .collect::<Result<_>>()?;
    let numel: usize = shape.iter().product();
    let body = &bytes[start + header_len..];
    let need = |size: usize| -> Result<&[u8]> {
        body.get(..numel * size).ok_or_else(|| bad(&format!("expected {} data bytes, found {}", numel * size, body.len())))
    };
    let data = match descr {
        "<f4" => NpyData::F64(need(4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()),
        "<f8" => NpyData::F64(need(8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        "<i4" => NpyData::F64(need(4)?.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64).collect()),
        "<i8" => NpyData::F64(need(8)?.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64).collect()),
        "|u1" | "|b1" | "|i1" => NpyData::U8(need(1)?.to_vec()),
        other => return Err(bad(&format!("unsupported dtype {other}"))),
    };
    Ok(NpyArray { shape, data })
}

fn read_npz(path: &Path) -> Result<BTreeMap<String, NpyArray>> {
    let file = File::open(path).map_err(|e| VipError::io(path, e))?;
    let mut archive =
        zip::ZipArchive::new(file).map_err(|e| VipError::Format(format!("{}: not an npz archive: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i).map_err(|e| VipError::Format(format!("{}: {e}", path.display())))?;
        let name = entry.name().trim_end_matches(".npy").to_string();
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes).map_err(|e| VipError::io(path, e))?;
        out.insert(name.clone(), parse_npy(&name, &bytes)?);
    }
    Ok(out)
}

fn json_str(v: &Value, key: &str) -> Option<String> {
    match v.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn json_u64(v: &Value, key: &str) -> Option<u64> {
    match v.get(key)? {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// Builds a [`Clip`] from an `.npz` array archive and its JSON annotation.
pub fn load_dataset_pair(npz: &Path, json: &Path, keys: &AdapterKeys) -> Result<Clip> {
    let arrays = read_npz(npz)?;
    let ann: Value = serde_json::from_slice(&std::fs::read(json).map_err(|e| VipError::io(json, e))?)
        .map_err(|e| VipError::json(json.display().to_string(), e))?;

    let boxes = arrays
        .get(&keys.boxes)
        .ok_or_else(|| VipError::Format(format!("{}: no `{}` array", npz.display(), keys.boxes)))?;
    if boxes.shape.len() != 3 || boxes.shape[2] != 4 {
        return Err(VipError::Format(format!("`{}` must be T×N×4, found {:?}", keys.boxes, boxes.shape)));
    }
    let (t, n) = (boxes.shape[0], boxes.shape[1]);
    let bvals = boxes.as_f64();

    let valid = match arrays.get(&keys.valid) {
        Some(v) if v.shape == [t, n] => Some(v.as_f64()),
        Some(v) => return Err(VipError::Format(format!("`{}` must be {t}×{n}, found {:?}", keys.valid, v.shape))),
        None => None,
    };
    let lips = match arrays.get(&keys.lips) {
        Some(v) if v.shape == [t, n, 2, 2] => Some(v.as_f64()),
        Some(v) => return Err(VipError::Format(format!("`{}` must be {t}×{n}×2×2, found {:?}", keys.lips, v.shape))),
        None => None,
    };

    let people: Vec<Value> = ann.get(&keys.json_persons).and_then(Value::as_array).cloned().unwrap_or_default();
    if !people.is_empty() && people.len() != n {
        return Err(VipError::Format(format!(
            "annotation lists {} persons but `{}` has N={n}",
            people.len(),
            keys.boxes
        )));
    }

    let mut persons = Vec::with_capacity(n);
    for p in 0..n {
        let meta = people.get(p);
        let person_id = meta.and_then(|m| json_u64(m, &keys.json_person_id)).unwrap_or(p as u64) as u32;
        let description = meta.and_then(|m| json_str(m, &keys.json_person_description)).unwrap_or_default();
        let mut track_boxes = Vec::with_capacity(t);
        let mut present = Vec::with_capacity(t);
        for f in 0..t {
            let o = (f * n + p) * 4;
            let b = [bvals[o] as f32, bvals[o + 1] as f32, bvals[o + 2] as f32, bvals[o + 3] as f32];
            let here = match &valid {
                Some(v) => v[f * n + p] != 0.0,
                None => b[2] > b[0] && b[3] > b[1],
            };
            track_boxes.push(b);
            present.push(here);
        }
        let lip_points = lips.as_ref().map(|l| {
            (0..t)
                .map(|f| {
                    let o = (f * n + p) * 4;
                    [[l[o] as f32, l[o + 1] as f32], [l[o + 2] as f32, l[o + 3] as f32]]
                })
                .collect()
        });
        persons.push(PersonTrack {
            person_id,
            description,
            boxes: track_boxes,
            present,
            face_boxes: None,
            lip_points,
            clarity: None,
            motion_energy: None,
        });
    }

    let frames = match arrays.get(&keys.frames) {
        Some(fr) if fr.shape.len() == 4 && fr.shape[0] == t && fr.shape[3] == 3 => match &fr.data {
            NpyData::U8(d) => Some(Frames { num_frames: t, height: fr.shape[1], width: fr.shape[2], data: d.clone() }),
            NpyData::F64(d) => Some(Frames {
                num_frames: t,
                height: fr.shape[1],
                width: fr.shape[2],
                data: d.iter().map(|v| v.clamp(0.0, 255.0).round() as u8).collect(),
            }),
        },
        Some(fr) => return Err(VipError::Format(format!("`{}` must be T×H×W×3, found {:?}", keys.frames, fr.shape))),
        None => None,
    };

    let width = json_u64(&ann, &keys.json_width)
        .map(|w| w as u32)
        .or(frames.as_ref().map(|f| f.width as u32))
        .ok_or_else(|| VipError::Format("annotation has no width and archive has no frames".into()))?;
    let height = json_u64(&ann, &keys.json_height)
        .map(|h| h as u32)
        .or(frames.as_ref().map(|f| f.height as u32))
        .ok_or_else(|| VipError::Format("annotation has no height and archive has no frames".into()))?;
    let vip = json_u64(&ann, &keys.json_vip)
        .ok_or_else(|| VipError::Format(format!("annotation has no `{}`", keys.json_vip)))? as u32;
    let category = json_str(&ann, &keys.json_category).and_then(|c| Category::parse(&c)).unwrap_or(Category::PublicSpace);
    let clip_id = json_str(&ann, &keys.json_clip_id)
        .unwrap_or_else(|| npz.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());

    Ok(Clip {
        clip_id,
        category,
        fps: ann.get(&keys.json_fps).and_then(Value::as_f64),
        num_frames: t,
        width,
        height,
        frames,
        persons,
        scene_description: json_str(&ann, &keys.json_scene).unwrap_or_default(),
        vip_person_id: vip,
        rationale_text: json_str(&ann, &keys.json_rationale).unwrap_or_default(),
        split: json_str(&ann, &keys.json_split).and_then(|s| Split::parse(&s)).unwrap_or(Split::Test),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn npy_bytes(descr: &str, shape: &[usize], body: &[u8]) -> Vec<u8> {
        let shape_s = match shape.len() {
            1 => format!("({},)", shape[0]),
            _ => format!("({})", shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
        };
        let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_s}, }}");
        while (10 + header.len() + 1) % 64 != 0 {
            header.push(' ');
        }
        header.push('\n');
        let mut out = b"\x93NUMPY\x01\x00".to_vec();
        out.extend((header.len() as u16).to_le_bytes());
        out.extend(header.as_bytes());
        out.extend(body);
        out
    }

    pub(crate) fn write_npz(path: &Path, entries: &[(&str, Vec<u8>)]) {
        let f = File::create(path).unwrap();
        let mut zw = zip::ZipWriter::new(f);
        let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
        for (name, bytes) in entries {
            zw.start_file(format!("{name}.npy"), opts).unwrap();
            zw.write_all(bytes).unwrap();
        }
        zw.finish().unwrap();
    }

    #[test]
    fn pair_with_three_persons() {
        let dir = tempfile::tempdir().unwrap();
        let (t, n) = (4usize, 3usize);
        let mut boxes = Vec::new();
        for _f in 0..t {
            for p in 0..n {
                let x = 10.0 + 50.0 * p as f32;
                boxes.extend([x, 10.0, x + 40.0, 90.0]);
            }
        }
        let body: Vec<u8> = boxes.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut valid = vec![1u8; t * n];
        valid[n + 2] = 0;
        let npz = dir.path().join("clip.npz");
        write_npz(&npz, &[("boxes", npy_bytes("<f4", &[t, n, 4], &body)), ("valid", npy_bytes("|b1", &[t, n], &valid))]);
        let json = dir.path().join("clip.json");
        std::fs::write(
            &json,
            r#"{"video_id": "v1", "category": "Courtroom", "fps": 1.0, "width": 200, "height": 100,
                "scene_description": "a hearing", "vip_id": 1, "rationale": "the judge speaks",
                "persons": [{"person_id": 0, "description": "a"}, {"person_id": 1, "description": "b"}, {"person_id": 2, "description": "c"}]}"#,
        )
        .unwrap();
        let clip = load_dataset_pair(&npz, &json, &AdapterKeys::default()).unwrap();
        assert_eq!(clip.persons.len(), 3);
        assert_eq!(clip.category, Category::Courtroom);
        assert_eq!(clip.vip_person_id, 1);
        assert!(!clip.persons[2].present[1]);
        assert_eq!(clip.persons[1].boxes[0], [60.0, 10.0, 100.0, 90.0]);
    }

    #[test]
    fn rejects_bad_box_shape() {
        let dir = tempfile::tempdir().unwrap();
        let npz = dir.path().join("c.npz");
        write_npz(&npz, &[("boxes", npy_bytes("<f8", &[2, 3], &[0u8; 48]))]);
        let json = dir.path().join("c.json");
        std::fs::write(&json, r#"{"vip_id": 0, "width": 10, "height": 10}"#).unwrap();
        assert!(matches!(load_dataset_pair(&npz, &json, &AdapterKeys::default()), Err(VipError::Format(_))));
    }

    /// Runs against a real dataset sample when `VIP_DATASET_SAMPLE` points
    /// to a directory holding `<stem>.npz` and `<stem>.json`.
    #[test]
    fn real_sample_when_available() {
        let Ok(dir) = std::env::var("VIP_DATASET_SAMPLE") else {
            eprintln!("VIP_DATASET_SAMPLE not set; skipping dataset adapter check");
            return;
        };
        let dir = Path::new(&dir);
        let npz = std::fs::read_dir(dir)
            .unwrap()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .find(|p| p.extension().is_some_and(|e| e == "npz"))
            .expect("no .npz in sample dir");
        let json = npz.with_extension("json");
        let clip = load_dataset_pair(&npz, &json, &AdapterKeys::default()).unwrap();
        let ann: Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
        if let Some(p) = ann.get("persons").and_then(Value::as_array) {
            assert_eq!(clip.persons.len(), p.len());
        }
    }
}

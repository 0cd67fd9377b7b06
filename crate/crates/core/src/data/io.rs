//! Canonical clip directory: `manifest.json` plus one raw little-endian array
//! file per tensor (`<name>.bin`) with a JSON sidecar (`<name>.json`)
//! holding `{dtype, shape}`. Arrays are row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_clip, BBox, Category, Clip, Frames, LipAnchors, PersonTrack, Severity, Split, Violation};
use crate::error::{Result, VipError};

pub const CLIP_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    U8,
    Bool,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 | DType::Bool => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl ArrayHeader {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| VipError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| VipError::io(path, e))
}

/// Writes `<dir>/<name>.bin` and its sidecar.
pub fn write_array(dir: &Path, name: &str, header: &ArrayHeader, bytes: &[u8]) -> Result<()> {
    assert_eq!(header.numel() * header.dtype.size(), bytes.len(), "array {name}: byte length mismatch");
    let sidecar = serde_json::to_vec(header).map_err(|e| VipError::json(name, e))?;
    write_file(&dir.join(format!("{name}.json")), &sidecar)?;
    write_file(&dir.join(format!("{name}.bin")), bytes)
}

/// Reads an array, checking the file size against its sidecar.
pub fn read_array(dir: &Path, name: &str) -> Result<(ArrayHeader, Vec<u8>)> {
    let side_path = dir.join(format!("{name}.json"));
    let header: ArrayHeader = serde_json::from_slice(&read_file(&side_path)?)
        .map_err(|e| VipError::json(side_path.display().to_string(), e))?;
    let bytes = read_file(&dir.join(format!("{name}.bin")))?;
    let expected = header.numel() * header.dtype.size();
    if bytes.len() != expected {
        return Err(VipError::Format(format!(
            "array `{name}`: sidecar shape {:?} ({:?}) needs {expected} bytes, file has {}",
            header.shape,
            header.dtype,
            bytes.len()
        )));
    }
    Ok((header, bytes))
}

pub(crate) fn f32_bytes(v: impl IntoIterator<Item = f32>) -> Vec<u8> {
    v.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn f64_bytes(v: impl IntoIterator<Item = f64>) -> Vec<u8> {
    v.into_iter().flat_map(f64::to_le_bytes).collect()
}

pub(crate) fn read_f32(dir: &Path, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
    let (h, bytes) = read_typed(dir, name, DType::F32, shape)?;
    debug_assert_eq!(h.dtype, DType::F32);
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn read_f64(dir: &Path, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let (h, bytes) = read_array(dir, name)?;
    if h.dtype != DType::F64 {
        return Err(VipError::Format(format!("array `{name}`: expected f64, found {:?}", h.dtype)));
    }
    let v = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((h.shape, v))
}

fn read_typed(dir: &Path, name: &str, dtype: DType, shape: &[usize]) -> Result<(ArrayHeader, Vec<u8>)> {
    let (h, bytes) = read_array(dir, name)?;
    if h.dtype != dtype {
        return Err(VipError::Format(format!("array `{name}`: expected {dtype:?}, found {:?}", h.dtype)));
    }
    if h.shape != shape {
        return Err(VipError::Format(format!(
            "array `{name}`: manifest implies shape {shape:?}, sidecar declares {:?}",
            h.shape
        )));
    }
    Ok((h, bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct PersonEntry {
    person_id: u32,
    description: String,
    arrays: PersonArrays,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct PersonArrays {
    boxes: String,
    present: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    face_boxes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lip_points: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clarity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    motion_energy: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    clip_id: String,
    category: Category,
    fps: Option<f64>,
    num_frames: usize,
    width: u32,
    height: u32,
    scene_description: String,
    vip_person_id: u32,
    rationale_text: String,
    split: Split,
    frames: Option<String>,
    persons: Vec<PersonEntry>,
}

/// A loaded clip together with any invariant violations found in it.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub clip: Clip,
    pub warnings: Vec<Violation>,
}

/// Writes `clip` into directory `path`, creating it. Refuses clips with
/// error-severity violations.
pub fn save_clip(clip: &Clip, path: &Path) -> Result<()> {
    let errors: Vec<Violation> =
        validate_clip(clip).into_iter().filter(|v| v.severity == Severity::Error).collect();
    if !errors.is_empty() {
        return Err(VipError::Validation(errors));
    }
    fs::create_dir_all(path).map_err(|e| VipError::io(path, e))?;
    let t = clip.num_frames;

    let frames = match &clip.frames {
        Some(fr) => {
            let h = ArrayHeader { dtype: DType::U8, shape: vec![fr.num_frames, fr.height, fr.width, 3] };
            write_array(path, "frames", &h, &fr.data)?;
            Some("frames".to_string())
        }
        None => None,
    };

    let mut persons = Vec::with_capacity(clip.persons.len());
    for (i, p) in clip.persons.iter().enumerate() {
        let prefix = format!("person_{i}");
        let mut arrays = PersonArrays { boxes: format!("{prefix}_boxes"), present: format!("{prefix}_present"), ..Default::default() };
        write_array(
            path,
            &arrays.boxes,
            &ArrayHeader { dtype: DType::F32, shape: vec![t, 4] },
            &f32_bytes(p.boxes.iter().flatten().copied()),
        )?;
        write_array(
            path,
            &arrays.present,
            &ArrayHeader { dtype: DType::Bool, shape: vec![t] },
            &p.present.iter().map(|&b| b as u8).collect::<Vec<_>>(),
        )?;
        if let Some(fb) = &p.face_boxes {
            let name = format!("{prefix}_face_boxes");
            write_array(path, &name, &ArrayHeader { dtype: DType::F32, shape: vec![t, 4] }, &f32_bytes(fb.iter().flatten().copied()))?;
            arrays.face_boxes = Some(name);
        }
        if let Some(lp) = &p.lip_points {
            let name = format!("{prefix}_lip_points");
            write_array(
                path,
                &name,
                &ArrayHeader { dtype: DType::F32, shape: vec![t, 2, 2] },
                &f32_bytes(lp.iter().flatten().flatten().copied()),
            )?;
            arrays.lip_points = Some(name);
        }
        if let Some(c) = &p.clarity {
            let name = format!("{prefix}_clarity");
            write_array(path, &name, &ArrayHeader { dtype: DType::F32, shape: vec![t] }, &f32_bytes(c.iter().copied()))?;
            arrays.clarity = Some(name);
        }
        if let Some(m) = &p.motion_energy {
            let name = format!("{prefix}_motion_energy");
            write_array(path, &name, &ArrayHeader { dtype: DType::F32, shape: vec![t] }, &f32_bytes(m.iter().copied()))?;
            arrays.motion_energy = Some(name);
        }
        persons.push(PersonEntry { person_id: p.person_id, description: p.description.clone(), arrays });
    }

    let manifest = Manifest {
        format_version: CLIP_FORMAT_VERSION,
        clip_id: clip.clip_id.clone(),
        category: clip.category,
        fps: clip.fps,
        num_frames: t,
        width: clip.width,
        height: clip.height,
        scene_description: clip.scene_description.clone(),
        vip_person_id: clip.vip_person_id,
        rationale_text: clip.rationale_text.clone(),
        split: clip.split,
        frames,
        persons,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| VipError::json("manifest", e))?;
    write_file(&path.join(MANIFEST), &json)
}

fn boxes_from(v: Vec<f32>) -> Vec<BBox> {
    v.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect()
}

/// Reads a clip directory written by [`save_clip`].
pub fn load_clip(path: &Path) -> Result<LoadedClip> {
    let mpath = path.join(MANIFEST);
    if !mpath.is_file() {
        return Err(VipError::Load(format!("no {MANIFEST} in {}", path.display())));
    }
    let manifest: Manifest = serde_json::from_slice(&read_file(&mpath)?)
        .map_err(|e| VipError::json(mpath.display().to_string(), e))?;
    if manifest.format_version != CLIP_FORMAT_VERSION {
        return Err(VipError::Format(format!("unsupported clip format version {}", manifest.format_version)));
    }
    let t = manifest.num_frames;

    let frames = match &manifest.frames {
        Some(name) => {
            let shape = [t, manifest.height as usize, manifest.width as usize, 3];
            let (_, data) = read_typed(path, name, DType::U8, &shape)?;
            Some(Frames { num_frames: t, height: shape[1], width: shape[2], data })
        }
        None => None,
    };

    let mut persons = Vec::with_capacity(manifest.persons.len());
    for entry in manifest.persons {
        let a = &entry.arrays;
        let boxes = boxes_from(read_f32(path, &a.boxes, &[t, 4])?);
        let (_, present_bytes) = read_typed(path, &a.present, DType::Bool, &[t])?;
        let present = present_bytes.iter().map(|&b| b != 0).collect();
        let face_boxes = a.face_boxes.as_ref().map(|n| read_f32(path, n, &[t, 4]).map(boxes_from)).transpose()?;
        let lip_points = a
            .lip_points
            .as_ref()
            .map(|n| {
                read_f32(path, n, &[t, 2, 2])
                    .map(|v| v.chunks_exact(4).map(|c| [[c[0], c[1]], [c[2], c[3]]]).collect::<Vec<LipAnchors>>())
            })
            .transpose()?;
        let clarity = a.clarity.as_ref().map(|n| read_f32(path, n, &[t])).transpose()?;
        let motion_energy = a.motion_energy.as_ref().map(|n| read_f32(path, n, &[t])).transpose()?;
        persons.push(PersonTrack {
            person_id: entry.person_id,
            description: entry.description,
            boxes,
            present,
            face_boxes,
            lip_points,
            clarity,
            motion_energy,
        });
    }

    let clip = Clip {
        clip_id: manifest.clip_id,
        category: manifest.category,
        fps: manifest.fps,
        num_frames: t,
        width: manifest.width,
        height: manifest.height,
        frames,
        persons,
        scene_description: manifest.scene_description,
        vip_person_id: manifest.vip_person_id,
        rationale_text: manifest.rationale_text,
        split: manifest.split,
    };
    let warnings = validate_clip(&clip);
    Ok(LoadedClip { clip, warnings })
}

/// Loads every clip directory under `root/clips` (or `root` itself when it
/// has no `clips` subdirectory), sorted by directory name.
pub fn load_corpus(root: &Path) -> Result<Vec<Clip>> {
    let base: PathBuf = if root.join("clips").is_dir() { root.join("clips") } else { root.to_path_buf() };
    let mut dirs: Vec<PathBuf> = fs::read_dir(&base)
        .map_err(|e| VipError::io(&base, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(VipError::Load(format!("no clip directories found under {}", base.display())));
    }
    dirs.iter()
        .map(|d| {
            let loaded = load_clip(d)?;
            for w in &loaded.warnings {
                log::warn!("{}: {w}", loaded.clip.clip_id);
            }
            Ok(loaded.clip)
        })
        .collect()
}

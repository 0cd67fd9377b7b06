//! Checkpoint directories: one f64 array per parameter plus a manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{fingerprint, ModelConfig, TrainConfig};
use crate::data::{f64_bytes, read_f64, write_array, ArrayHeader, DType};
use crate::error::{Result, VipError};
use crate::model::VipNet;
use crate::tensor::Mat;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub fingerprint: String,
    pub params: Vec<ParamEntry>,
}

pub fn save(net: &VipNet, train: Option<&TrainConfig>, dir: &Path) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(|e| VipError::io(&pdir, e))?;
    let mut params = Vec::with_capacity(net.params.len());
    for (_, name, m) in net.params.iter() {
        let header = ArrayHeader { dtype: DType::F64, shape: vec![m.rows, m.cols] };
        write_array(&pdir, name, &header, &f64_bytes(m.data.iter().copied()))?;
        params.push(ParamEntry { name: name.to_string(), shape: [m.rows, m.cols] });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        model: net.config.clone(),
        train: train.cloned(),
        seed: train.map_or(net.config.seed, |t| t.seed),
        fingerprint: fingerprint(&(&net.config, train)),
        params,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| VipError::json(MANIFEST, e))?;
    fs::write(&path, text + "\n").map_err(|e| VipError::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| VipError::io(&path, e))?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| VipError::json(path.display().to_string(), e))?;
    if m.version != CHECKPOINT_VERSION {
        return Err(VipError::Format(format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", m.version)));
    }
    Ok(m)
}

pub fn load(dir: &Path) -> Result<(VipNet, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut net = VipNet::new(manifest.model.clone())?;
    if net.params.len() != manifest.params.len() {
        return Err(VipError::Format(format!(
            "checkpoint lists {} parameters, the model has {}",
            manifest.params.len(),
            net.params.len()
        )));
    }
    let pdir = dir.join("params");
    for entry in &manifest.params {
        let (shape, data) = read_f64(&pdir, &entry.name)?;
        let target = net
            .params
            .get_mut(&entry.name)
            .ok_or_else(|| VipError::Format(format!("unknown parameter `{}` in checkpoint", entry.name)))?;
        if shape != vec![target.rows, target.cols] {
            return Err(VipError::Format(format!(
                "parameter `{}`: stored shape {shape:?}, model expects {:?}",
                entry.name,
                (target.rows, target.cols)
            )));
        }
        *target = Mat::from_vec(target.rows, target.cols, data);
    }
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::InferenceConfig;
    use crate::data::fixtures::simple_clip;
    use crate::inference::predict;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut net = VipNet::new(ModelConfig::toy(8)).unwrap();
        for (i, x) in net.params.get_mut("cls.w").unwrap().data.iter_mut().enumerate() {
            *x = (i as f64 * 0.1).sin() / 3.0 + 1e-17;
        }
        let dir = tempfile::tempdir().unwrap();
        save(&net, Some(&TrainConfig::default()), dir.path()).unwrap();
        let (back, manifest) = load(dir.path()).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(manifest.dtype, "f64");
        let clip = simple_clip(3, 10);
        let a = predict(&net, &clip, &InferenceConfig::default()).unwrap();
        let b = predict(&back, &clip, &InferenceConfig::default()).unwrap();
        assert_eq!(a.probabilities.iter().map(|p| p.to_bits()).collect::<Vec<_>>(), b.probabilities.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn shape_mismatch_is_a_format_error() {
        let net = VipNet::new(ModelConfig::toy(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&net, None, dir.path()).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.model.dim = 16;
        fs::write(dir.path().join(MANIFEST), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load(dir.path()), Err(VipError::Format(_))));
    }
}

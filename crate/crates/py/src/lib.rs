//! Python bindings: synthetic corpora, training, prediction, explanation,
//! evaluation and gradient checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use vipnet::config::{InferenceConfig, ModelConfig, TrainConfig};
use vipnet::cues::text::HashingSentenceEmbedder;
use vipnet::cues::Cue;
use vipnet::data::{self, Split};
use vipnet::eval::{self, EvalOptions, Predictor};
use vipnet::inference::{self, GuidanceMode};
use vipnet::model::VipNet;
use vipnet::refine::{refine_rationale, MockClient, RefinementClient};
use vipnet::synth::{make_corpus, CorpusOptions, Profile};
use vipnet::training::{self, checkpoint};
use vipnet::VipError;

fn err(e: VipError) -> PyErr {
    match e {
        VipError::Io { .. } => PyIOError::new_err(e.to_string()),
        VipError::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// One clip: person tracks, cue channels and the annotated VIP.
#[pyclass(name = "Clip", module = "vipnet", from_py_object)]
#[derive(Clone)]
pub struct PyClip {
    inner: data::Clip,
}

#[pymethods]
impl PyClip {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::load_clip(&path).map_err(err)?.clip })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_clip(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn clip_id(&self) -> String {
        self.inner.clip_id.clone()
    }

    #[getter]
    fn category(&self) -> &'static str {
        self.inner.category.as_str()
    }

    #[getter]
    fn split(&self) -> &'static str {
        self.inner.split.as_str()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.num_frames
    }

    #[getter]
    fn person_ids(&self) -> Vec<u32> {
        self.inner.person_ids()
    }

    #[getter]
    fn vip_person_id(&self) -> u32 {
        self.inner.vip_person_id
    }

    fn __repr__(&self) -> String {
        format!("Clip({}, persons={}, frames={}, vip={})", self.inner.clip_id, self.inner.persons.len(), self.inner.num_frames, self.inner.vip_person_id)
    }
}

fn unwrap_clips(clips: Vec<PyRef<'_, PyClip>>) -> Vec<data::Clip> {
    clips.iter().map(|c| c.inner.clone()).collect()
}

/// A VIP ranking network.
#[pyclass(name = "Model", module = "vipnet")]
pub struct PyModel {
    inner: VipNet,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (dim = 64, seed = 0))]
    fn new(dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: VipNet::new(ModelConfig { dim, seed, ..ModelConfig::default() }).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: checkpoint::load(&path).map_err(err)?.0 })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, None, &path).map_err(err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.iter().map(|(_, _, m)| m.len()).sum()
    }

    /// Person probabilities, ranking and per-cue percentile ranks.
    #[pyo3(signature = (clip, tau_c = 0.07))]
    fn predict<'py>(&self, py: Python<'py>, clip: &PyClip, tau_c: f64) -> PyResult<Bound<'py, PyAny>> {
        let cfg = InferenceConfig { tau_c, ..InferenceConfig::default() };
        to_py(py, &inference::predict(&self.inner, &clip.inner, &cfg).map_err(err)?)
    }

    /// Rationale for the top person, refined by the offline mock client.
    #[pyo3(signature = (clip, mode = "guided"))]
    fn explain<'py>(&self, py: Python<'py>, clip: &PyClip, mode: &str) -> PyResult<Bound<'py, PyAny>> {
        let mode = GuidanceMode::parse(mode).ok_or_else(|| PyValueError::new_err(format!("unknown mode `{mode}`")))?;
        let cfg = InferenceConfig::default();
        let r = inference::predict(&self.inner, &clip.inner, &cfg).map_err(err)?;
        let rationale = inference::make_rationale(&r.per_cue_rank, cfg.tau_m);
        let rationale = refine_rationale(&MockClient::default(), &clip.inner.clip_id, r.vip_id, rationale, mode);
        to_py(py, &rationale)
    }
}

/// Synthetic clips with oracle VIP labels.
#[pyfunction]
#[pyo3(signature = (count, seed = 0, profile = "mixed", split = (0.8, 0.1, 0.1)))]
fn synth(count: usize, seed: u64, profile: &str, split: (f64, f64, f64)) -> PyResult<Vec<PyClip>> {
    let profile = Profile::parse(profile).ok_or_else(|| PyValueError::new_err(format!("unknown profile `{profile}`")))?;
    let opts = CorpusOptions { profile, ..CorpusOptions::default() };
    let items = make_corpus(count, [split.0, split.1, split.2], seed, &opts).map_err(err)?;
    Ok(items.into_iter().map(|(inner, _)| PyClip { inner }).collect())
}

#[pyfunction]
fn load_corpus(path: PathBuf) -> PyResult<Vec<PyClip>> {
    Ok(data::load_corpus(&path).map_err(err)?.into_iter().map(|inner| PyClip { inner }).collect())
}

/// Person ids ranked by one heuristic cue.
#[pyfunction]
fn baseline(clip: &PyClip, cue: &str) -> PyResult<Vec<u32>> {
    let cue = Cue::parse(cue).ok_or_else(|| PyValueError::new_err(format!("unknown cue `{cue}`")))?;
    eval::heuristic_baseline(&clip.inner, cue, &ModelConfig::default()).map_err(err)
}

/// Trains a model and returns it with the per-epoch metrics.
#[pyfunction]
#[pyo3(signature = (clips, dim = 64, epochs = 50, lr = 5e-5, batch_size = 16, lambda_cont = 0.3, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    clips: Vec<PyRef<'py, PyClip>>,
    dim: usize,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    lambda_cont: f64,
    seed: u64,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let clips = unwrap_clips(clips);
    let model = ModelConfig { dim, seed, ..ModelConfig::default() };
    let cfg = TrainConfig { epochs, base_lr: lr, batch_size, lambda_cont, seed, ..TrainConfig::default() };
    let (train_set, val) = training::split_samples(&clips, &model).map_err(err)?;
    let train_set = if train_set.is_empty() { training::samples(&clips, &model).map_err(err)? } else { train_set };
    let out = py.detach(|| training::train(model, &train_set, &val, &cfg)).map_err(err)?;
    let log = to_py(py, &out.log)?;
    Ok((PyModel { inner: out.net }, log))
}

/// Rank-k accuracy, baselines and description similarity.
#[pyfunction]
#[pyo3(signature = (model, clips, split = None))]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, clips: Vec<PyRef<'py, PyClip>>, split: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let split = split.map(|s| Split::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown split `{s}`")))).transpose()?;
    let clips = unwrap_clips(clips);
    let opts = EvalOptions { split, ..EvalOptions::default() };
    let predictor = Predictor::Model { net: &model.inner, inference: InferenceConfig::default() };
    let client = MockClient::default();
    let report = eval::evaluate(&predictor, &clips, &opts, Some(&client as &dyn RefinementClient), &HashingSentenceEmbedder::default()).map_err(err)?;
    to_py(py, &report)
}

/// Finite-difference check of the analytic gradients on the toy problem.
#[pyfunction]
#[pyo3(signature = (seed = 3))]
fn gradcheck<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (net, batch, offsets) = training::toy_problem(seed).map_err(err)?;
    let report = training::grad_check(&net, &batch, &offsets, &TrainConfig::default(), training::FD_STEP).map_err(err)?;
    to_py(py, &report)
}

#[pymodule(name = "vipnet")]
mod vipnet_module {
    #[pymodule_export]
    use super::{baseline, evaluate, gradcheck, load_corpus, synth, train, PyClip, PyModel};
}

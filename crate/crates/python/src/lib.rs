//! Python module `phase_manifold_py`.

use std::path::PathBuf;

use phase_manifold::manifold::{self, PhaseTrack};
use phase_manifold::matching::{self, EmbeddingDatabase, MatchOutput};
use phase_manifold::motion::{pose_descriptor, MotionSequence};
use phase_manifold::synth::{self, GaitSpec};
use phase_manifold::vqpae::{self, SharedModel, TrainConfig, TrainingSet};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: phase_manifold::Error) -> PyErr {
    match e {
        phase_manifold::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Motion", module = "phase_manifold_py", from_py_object)]
#[derive(Clone)]
struct Motion {
    inner: MotionSequence,
}

#[pymethods]
impl Motion {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: MotionSequence::load(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn framerate(&self) -> f64 {
        self.inner.framerate()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.inner.joint_names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.frame_count()
    }

    /// Root-local joint positions of one frame, flattened `x y z` per joint.
    fn local_positions(&self, frame: usize) -> PyResult<Vec<f64>> {
        if frame >= self.inner.frame_count() {
            return Err(PyValueError::new_err(format!("frame {frame} out of range")));
        }
        Ok(self.inner.local_positions(frame).to_vec())
    }

    fn slice(&self, start: usize, len: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.slice(start, len).map_err(py_err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Motion(name={:?}, frames={}, joints={}, framerate={})",
            self.inner.name,
            self.inner.frame_count(),
            self.inner.joint_count(),
            self.inner.framerate()
        )
    }
}

#[pyclass(name = "Track", module = "phase_manifold_py", skip_from_py_object)]
#[derive(Clone)]
struct Track {
    inner: PhaseTrack,
}

#[pymethods]
impl Track {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: PhaseTrack::load(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn dataset(&self) -> String {
        self.inner.dataset.clone()
    }

    #[getter]
    fn framerate(&self) -> f64 {
        self.inner.framerate
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn phases(&self) -> Vec<f64> {
        self.inner.phases()
    }

    fn frequencies(&self) -> Vec<f64> {
        self.inner.frequencies()
    }

    fn amplitude_indices(&self) -> Vec<usize> {
        self.inner.amplitude_indices()
    }

    fn embeddings(&self) -> Vec<Vec<f64>> {
        self.inner.points.iter().map(|p| p.embedding.clone()).collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }
}

#[pyclass(name = "Model", module = "phase_manifold_py")]
struct Model {
    inner: SharedModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: SharedModel::load(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn codebook_size(&self) -> usize {
        self.inner.codebook.size()
    }

    #[getter]
    fn datasets(&self) -> Vec<String> {
        self.inner.codebook.encoders().to_vec()
    }

    /// Rows of the shared codebook, one amplitude per row.
    fn codebook(&self) -> Vec<Vec<f64>> {
        (0..self.inner.codebook.size()).map(|i| self.inner.codebook.entry(i).to_vec()).collect()
    }

    #[pyo3(signature = (motion, dataset=None))]
    fn embed(&self, py: Python<'_>, motion: &Motion, dataset: Option<&str>) -> PyResult<Track> {
        let id = self.inner.model_for(&motion.inner, dataset).map_err(py_err)?.id.clone();
        let track = py.detach(|| self.inner.embed_sequence(&id, &motion.inner)).map_err(py_err)?;
        Ok(Track { inner: track })
    }
}

#[pyclass(name = "Database", module = "phase_manifold_py")]
struct Database {
    inner: EmbeddingDatabase,
}

fn match_result(py: Python<'_>, out: MatchOutput) -> PyResult<(Motion, Vec<Py<PyAny>>)> {
    let steps = out
        .steps
        .iter()
        .map(|m| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("query_start", m.query_start)?;
            d.set_item("query_len", m.query_len)?;
            d.set_item("db_start", m.db_start)?;
            d.set_item("db_len", m.db_len)?;
            d.set_item("cost", m.cost.total)?;
            Ok(d.into_any().unbind())
        })
        .collect::<PyResult<_>>()?;
    Ok((Motion { inner: out.motion }, steps))
}

#[pymethods]
impl Database {
    /// Embeds each motion with `model` and indexes the result.
    #[staticmethod]
    #[pyo3(signature = (model, motions, dataset=None))]
    fn build(model: &Model, motions: Vec<Motion>, dataset: Option<&str>) -> PyResult<Self> {
        let seqs: Vec<MotionSequence> = motions.into_iter().map(|m| m.inner).collect();
        let tracks = seqs
            .iter()
            .map(|s| {
                let id = model.inner.model_for(s, dataset)?.id.clone();
                model.inner.embed_sequence(&id, s)
            })
            .collect::<phase_manifold::Result<Vec<_>>>()
            .map_err(py_err)?;
        let db = matching::build_database(&tracks, &seqs, Some(&model.inner.codebook.entries.value)).map_err(py_err)?;
        Ok(Self { inner: db })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: EmbeddingDatabase::load(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn framerate(&self) -> f64 {
        self.inner.framerate()
    }

    /// Replays database poses along `query`. Returns the motion and one dict per step.
    #[pyo3(signature = (query, mode="freq", t0=30, lambda1=matching::DEFAULT_LAMBDA1, lambda2=matching::DEFAULT_LAMBDA2, query_motion=None, blend=None))]
    #[allow(clippy::too_many_arguments)]
    fn match_track(
        &self,
        py: Python<'_>,
        query: &Track,
        mode: &str,
        t0: usize,
        lambda1: f64,
        lambda2: f64,
        query_motion: Option<&Motion>,
        blend: Option<usize>,
    ) -> PyResult<(Motion, Vec<Py<PyAny>>)> {
        let initial = query_motion.map(|m| pose_descriptor(&m.inner, 0)).transpose().map_err(py_err)?;
        let blend = blend.unwrap_or_else(|| matching::default_blend_frames(self.inner.framerate()));
        let out = match mode {
            "fixed" => matching::match_fixed(&query.inner, &self.inner, t0, lambda1, initial.as_ref(), blend),
            "freq" => matching::match_frequency_scaled(&query.inner, &self.inner, lambda1, lambda2, initial.as_ref(), blend),
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}; use 'fixed' or 'freq'"))),
        }
        .map_err(py_err)?;
        match_result(py, out)
    }

    /// One cycle for amplitude index `amp` at frequency `freq`:
    /// `(sequence, start, len, cost, motion)`.
    fn retrieve(&self, amp: usize, freq: f64) -> PyResult<(String, usize, usize, f64, Motion)> {
        let r = matching::retrieve_by_frequency(&self.inner, amp, freq).map_err(py_err)?;
        Ok((r.sequence, r.start, r.len, r.cost, Motion { inner: r.motion }))
    }
}

/// `Ψ(A, φ)` for a flat amplitude vector `A = [A⁰; A¹]`.
#[pyfunction]
fn psi(a: Vec<f64>, phase: f64) -> PyResult<Vec<f64>> {
    if a.is_empty() || a.len() % 2 != 0 {
        return Err(PyValueError::new_err("amplitude length must be a positive even number"));
    }
    Ok(manifold::psi(&a, phase))
}

#[pyfunction]
fn phase_from_signal(signal: Vec<f64>, frequency: f64, timing: Vec<f64>) -> PyResult<f64> {
    Ok(manifold::phase_from_signal(&signal, frequency, &timing).map_err(py_err)?.phase)
}

/// Synthesizes one gait. Returns the motion and a dict of per-frame
/// `phase`, `frequency` and `class` ground truth.
#[pyfunction]
#[pyo3(signature = (template, gait_class, frequency=None, duration=None, framerate=None, noise=None, initial_phase=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    py: Python<'_>,
    template: &str,
    gait_class: &str,
    frequency: Option<f64>,
    duration: Option<f64>,
    framerate: Option<f64>,
    noise: Option<f64>,
    initial_phase: Option<f64>,
    seed: u64,
) -> PyResult<(Motion, Py<PyAny>)> {
    let t = template.parse().map_err(py_err)?;
    let c = gait_class.parse().map_err(py_err)?;
    let d = GaitSpec::new(t, c);
    let spec = GaitSpec {
        frequency: frequency.unwrap_or(d.frequency),
        duration: duration.unwrap_or(d.duration),
        framerate: framerate.unwrap_or(d.framerate),
        noise: noise.unwrap_or(d.noise),
        initial_phase: initial_phase.unwrap_or(d.initial_phase),
        seed,
        ..d
    };
    let (seq, gt) = synth::generate(&spec).map_err(py_err)?;
    let truth = pyo3::types::PyDict::new(py);
    truth.set_item("phase", gt.phase)?;
    truth.set_item("frequency", gt.frequency)?;
    truth.set_item("class", gt.class.iter().map(ToString::to_string).collect::<Vec<_>>())?;
    Ok((Motion { inner: seq }, truth.into_any().unbind()))
}

/// Trains one encoder per entry of `datasets` (id → motions) on a shared codebook.
/// Returns the model and the per-step total loss.
#[pyfunction]
#[pyo3(signature = (datasets, steps=2000, seed=0, lr=1e-4, batch=32, codebook_size=8, embedding_dim=8, hidden=None, reinit=true))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    datasets: Vec<(String, Vec<Motion>)>,
    steps: usize,
    seed: u64,
    lr: f64,
    batch: usize,
    codebook_size: usize,
    embedding_dim: usize,
    hidden: Option<usize>,
    reinit: bool,
) -> PyResult<(Model, Vec<f64>)> {
    let sets: Vec<TrainingSet> = datasets
        .into_iter()
        .map(|(id, ms)| TrainingSet { id, sequences: ms.into_iter().map(|m| m.inner).collect() })
        .collect();
    let cfg = TrainConfig { steps, seed, lr, batch, codebook_size, embedding_dim, hidden, reinit, ..TrainConfig::default() };
    let (model, report) = py.detach(|| vqpae::train_joint(&sets, &cfg)).map_err(py_err)?;
    Ok((Model { inner: model }, report.loss))
}

#[pymodule]
fn phase_manifold_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Motion>()?;
    m.add_class::<Track>()?;
    m.add_class::<Model>()?;
    m.add_class::<Database>()?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(phase_from_signal, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}

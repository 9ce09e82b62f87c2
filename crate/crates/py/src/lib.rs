//! Python bindings: file formats, the wire protocol, inference and the CLI.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use mlagru::dataset::{self as ds, ClassTable, GestureSequence, LandmarkFrame};
use mlagru::engine::protocol::{Message, PROTOCOL_VERSION};
use mlagru::engine::{Engine as CoreEngine, Ingest};
use mlagru::model::{format::FormatError, GestureClassifier};
use mlagru::numerics::Matrix;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn format_err(e: FormatError) -> PyErr {
    match e {
        FormatError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn class_table(manifest: Option<PathBuf>, audio_dir: PathBuf) -> PyResult<ClassTable> {
    match manifest {
        Some(p) => ClassTable::load_manifest(&p).map_err(value_err),
        None => Ok(ClassTable::canonical(&audio_dir)),
    }
}

fn to_sequence(label: Option<usize>, frames: Vec<Vec<f32>>) -> PyResult<GestureSequence> {
    let frames = frames
        .into_iter()
        .map(LandmarkFrame::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    GestureSequence::new(frames, label).map_err(value_err)
}

fn from_sequence(s: &GestureSequence) -> (Option<usize>, Vec<Vec<f32>>) {
    (s.label, s.frames().iter().map(|f| f.values().to_vec()).collect())
}

/// Canonical class names in index order.
#[pyfunction]
fn class_names() -> Vec<String> {
    ClassTable::default().names().to_vec()
}

/// Class/audio manifest text for the canonical table.
#[pyfunction]
#[pyo3(signature = (audio_dir = PathBuf::from("sounds")))]
fn class_manifest(audio_dir: PathBuf) -> String {
    ClassTable::canonical(&audio_dir).to_manifest()
}

/// Parses manifest text into `(name, audio_path)` pairs.
#[pyfunction]
fn parse_class_manifest(text: &str) -> PyResult<Vec<(String, String)>> {
    let t = ClassTable::parse_manifest(text).map_err(value_err)?;
    Ok((0..t.len())
        .map(|i| {
            (
                t.name(i).unwrap_or_default().to_owned(),
                t.audio_path(i).map(|p| p.display().to_string()).unwrap_or_default(),
            )
        })
        .collect())
}

/// Encodes `(label, frames)` samples as GLD1 bytes.
#[pyfunction]
fn encode_dataset<'py>(
    py: Python<'py>,
    samples: Vec<(usize, Vec<Vec<f32>>)>,
) -> PyResult<Bound<'py, PyBytes>> {
    let seqs = samples
        .into_iter()
        .map(|(l, f)| to_sequence(Some(l), f))
        .collect::<PyResult<Vec<_>>>()?;
    let bytes = ds::encode_dataset(&seqs).map_err(format_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Decodes GLD1 bytes into `(label, frames)` samples.
#[pyfunction]
fn decode_dataset(data: &[u8]) -> PyResult<Vec<(Option<usize>, Vec<Vec<f32>>)>> {
    let d = ds::decode_dataset(data).map_err(format_err)?;
    Ok(d.samples.iter().map(from_sequence).collect())
}

#[pyfunction]
fn save_dataset(path: PathBuf, samples: Vec<(usize, Vec<Vec<f32>>)>) -> PyResult<()> {
    let seqs = samples
        .into_iter()
        .map(|(l, f)| to_sequence(Some(l), f))
        .collect::<PyResult<Vec<_>>>()?;
    ds::save_dataset(&seqs, &path).map_err(format_err)
}

#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<Vec<(Option<usize>, Vec<Vec<f32>>)>> {
    let d = ds::load_dataset(&path).map_err(format_err)?;
    Ok(d.samples.iter().map(from_sequence).collect())
}

/// Generates the synthetic dataset and writes it as GLD1. Returns the
/// sample count.
#[pyfunction]
#[pyo3(signature = (path, per_class = 30, noise = 0.02, seed = 0))]
fn synth_dataset(path: PathBuf, per_class: usize, noise: f64, seed: u64) -> PyResult<usize> {
    let samples = ds::synth_generate(&ds::SynthConfig::new(per_class, noise, seed));
    ds::save_dataset(&samples, &path).map_err(format_err)?;
    Ok(samples.len())
}

fn message_dict<'py>(py: Python<'py>, m: &Message) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    match m {
        Message::Hello {
            version,
            feature_dim,
            timesteps,
        } => {
            d.set_item("type", "hello")?;
            d.set_item("version", version)?;
            d.set_item("feature_dim", feature_dim)?;
            d.set_item("timesteps", timesteps)?;
        }
        Message::Frame { timestamp_us, values } => {
            d.set_item("type", "frame")?;
            d.set_item("timestamp_us", timestamp_us)?;
            d.set_item("values", values.clone())?;
        }
        Message::HelloAck { class_names } => {
            d.set_item("type", "hello_ack")?;
            d.set_item("class_names", class_names.clone())?;
        }
        Message::Event {
            timestamp_us,
            class_index,
            confidence,
            class_name,
            audio_path,
        } => {
            d.set_item("type", "event")?;
            d.set_item("timestamp_us", timestamp_us)?;
            d.set_item("class_index", class_index)?;
            d.set_item("confidence", confidence)?;
            d.set_item("class_name", class_name)?;
            d.set_item("audio_path", audio_path)?;
        }
        Message::Status {
            frames_received,
            predictions,
            frames_dropped,
        } => {
            d.set_item("type", "status")?;
            d.set_item("frames_received", frames_received)?;
            d.set_item("predictions", predictions)?;
            d.set_item("frames_dropped", frames_dropped)?;
        }
        Message::Error { code, message } => {
            d.set_item("type", "error")?;
            d.set_item("code", code)?;
            d.set_item("message", message)?;
        }
    }
    Ok(d)
}

fn get<'py, T: FromPyObjectOwned<'py>>(d: &Bound<'py, PyDict>, key: &str) -> PyResult<T> {
    d.get_item(key)?
        .ok_or_else(|| value_err(format!("message is missing `{key}`")))?
        .extract()
        .map_err(Into::into)
}

fn dict_message(d: &Bound<'_, PyDict>) -> PyResult<Message> {
    let kind: String = get(d, "type")?;
    Ok(match kind.as_str() {
        "hello" => Message::Hello {
            version: get(d, "version")?,
            feature_dim: get(d, "feature_dim")?,
            timesteps: get(d, "timesteps")?,
        },
        "frame" => Message::Frame {
            timestamp_us: get(d, "timestamp_us")?,
            values: get(d, "values")?,
        },
        "hello_ack" => Message::HelloAck {
            class_names: get(d, "class_names")?,
        },
        "event" => Message::Event {
            timestamp_us: get(d, "timestamp_us")?,
            class_index: get(d, "class_index")?,
            confidence: get(d, "confidence")?,
            class_name: get(d, "class_name")?,
            audio_path: get(d, "audio_path")?,
        },
        "status" => Message::Status {
            frames_received: get(d, "frames_received")?,
            predictions: get(d, "predictions")?,
            frames_dropped: get(d, "frames_dropped")?,
        },
        "error" => Message::Error {
            code: get(d, "code")?,
            message: get(d, "message")?,
        },
        other => return Err(value_err(format!("unknown message type `{other}`"))),
    })
}

/// Encodes a message dict (`{"type": "hello", ...}`) as wire bytes.
#[pyfunction]
fn encode_message<'py>(py: Python<'py>, message: &Bound<'py, PyDict>) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = dict_message(message)?.encode().map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// HELLO for this engine's protocol version and frame geometry.
#[pyfunction]
fn encode_hello<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &Message::hello().encode().map_err(value_err)?))
}

#[pyfunction]
fn encode_frame<'py>(py: Python<'py>, timestamp_us: u64, values: Vec<f32>) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = Message::Frame { timestamp_us, values }
        .encode()
        .map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Splits complete messages off the front of `buffer`. Returns the decoded
/// messages and the number of bytes consumed; a trailing partial message
/// is left for the next call.
#[pyfunction]
fn decode_messages<'py>(py: Python<'py>, buffer: &[u8]) -> PyResult<(Vec<Bound<'py, PyDict>>, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while buffer.len() - pos >= 5 {
        let len = u32::from_le_bytes(buffer[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if len > mlagru::engine::protocol::MAX_PAYLOAD {
            return Err(value_err(format!("payload of {len} bytes exceeds the limit")));
        }
        if buffer.len() - pos < 5 + len {
            break;
        }
        let m = Message::decode(buffer[pos + 4], &buffer[pos + 5..pos + 5 + len]).map_err(value_err)?;
        out.push(message_dict(py, &m)?);
        pos += 5 + len;
    }
    Ok((out, pos))
}

/// A saved classifier, run in 32- or 64-bit arithmetic.
#[pyclass(frozen)]
struct Classifier {
    f32_model: Option<Arc<GestureClassifier<f32>>>,
    f64_model: Option<GestureClassifier<f64>>,
}

fn sequence_matrix<T: mlagru::numerics::Real>(frames: Vec<Vec<f32>>) -> PyResult<Matrix<T>> {
    let seq = to_sequence(None, frames)?;
    Ok(seq.to_matrix::<T>())
}

fn prediction_dict<'py, T: mlagru::numerics::Real>(
    py: Python<'py>,
    model: &GestureClassifier<T>,
    frames: Vec<Vec<f32>>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = model.forward(&sequence_matrix::<T>(frames)?).map_err(value_err)?;
    let d = PyDict::new(py);
    let dist = &p.distribution;
    d.set_item("index", dist.index)?;
    d.set_item("class_name", model.class_names().get(dist.index).cloned().unwrap_or_default())?;
    d.set_item("confidence", dist.confidence.as_f64())?;
    d.set_item(
        "probabilities",
        dist.probabilities.iter().map(|v| v.as_f64()).collect::<Vec<f64>>(),
    )?;
    let attention = p
        .attention
        .map(|a| a.scores.iter().map(|v| v.as_f64()).collect::<Vec<f64>>());
    d.set_item("attention", attention)?;
    Ok(d)
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    #[pyo3(signature = (path, float_bits = 32))]
    fn load(path: PathBuf, float_bits: u32) -> PyResult<Self> {
        match float_bits {
            32 => Ok(Classifier {
                f32_model: Some(Arc::new(GestureClassifier::<f32>::load(&path).map_err(format_err)?)),
                f64_model: None,
            }),
            64 => Ok(Classifier {
                f32_model: None,
                f64_model: Some(GestureClassifier::<f64>::load(&path).map_err(format_err)?),
            }),
            other => Err(value_err(format!("float_bits must be 32 or 64, got {other}"))),
        }
    }

    /// Freshly initialised model of the standard geometry.
    #[staticmethod]
    #[pyo3(signature = (variant = "mla-gru", seed = 0))]
    fn new(variant: &str, seed: u64) -> PyResult<Self> {
        let v = variant.parse().map_err(value_err)?;
        let m = GestureClassifier::<f32>::new(
            mlagru::model::Architecture::standard(v),
            ClassTable::default().names().to_vec(),
            seed,
        )
        .map_err(value_err)?;
        Ok(Classifier {
            f32_model: Some(Arc::new(m)),
            f64_model: None,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        match (&self.f32_model, &self.f64_model) {
            (Some(m), _) => m.save(&path).map_err(format_err),
            (_, Some(m)) => m.save(&path).map_err(format_err),
            _ => unreachable!("one width is always loaded"),
        }
    }

    #[getter]
    fn variant(&self) -> &'static str {
        match (&self.f32_model, &self.f64_model) {
            (Some(m), _) => m.variant().name(),
            (_, Some(m)) => m.variant().name(),
            _ => unreachable!(),
        }
    }

    #[getter]
    fn num_params(&self) -> usize {
        match (&self.f32_model, &self.f64_model) {
            (Some(m), _) => m.num_params(),
            (_, Some(m)) => m.num_params(),
            _ => unreachable!(),
        }
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        match (&self.f32_model, &self.f64_model) {
            (Some(m), _) => m.class_names().to_vec(),
            (_, Some(m)) => m.class_names().to_vec(),
            _ => unreachable!(),
        }
    }

    /// Classifies one 30 × 1662 sequence. Returns a dict with `index`,
    /// `class_name`, `confidence`, `probabilities` and `attention` (scores
    /// per timestep, or None for the baseline).
    fn predict<'py>(&self, py: Python<'py>, frames: Vec<Vec<f32>>) -> PyResult<Bound<'py, PyDict>> {
        match (&self.f32_model, &self.f64_model) {
            (Some(m), _) => prediction_dict(py, m, frames),
            (_, Some(m)) => prediction_dict(py, m, frames),
            _ => unreachable!(),
        }
    }
}

/// Streaming engine over a 32-bit model: feed frames, receive note events.
#[pyclass]
struct Engine {
    inner: CoreEngine<f32>,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (model, threshold = 0.7, stride = 30, classes = None, audio_dir = PathBuf::from("sounds")))]
    fn py_new(
        model: &Classifier,
        threshold: f64,
        stride: usize,
        classes: Option<PathBuf>,
        audio_dir: PathBuf,
    ) -> PyResult<Self> {
        let m = model
            .f32_model
            .clone()
            .ok_or_else(|| value_err("the engine runs 32-bit models; load with float_bits=32"))?;
        let table = Arc::new(class_table(classes, audio_dir)?);
        let inner = CoreEngine::new(m, table, threshold, stride).map_err(value_err)?;
        Ok(Engine { inner })
    }

    /// Feeds one frame of 1662 values. Returns an event dict when a
    /// prediction passes the confidence gate, otherwise None.
    fn push<'py>(&mut self, py: Python<'py>, values: Vec<f32>) -> PyResult<Option<Bound<'py, PyDict>>> {
        let outcome = self.inner.ingest_raw(values).map_err(value_err)?.map_err(value_err)?;
        match outcome {
            Ingest::Event(ev) => {
                let d = PyDict::new(py);
                d.set_item("class_index", ev.class_index)?;
                d.set_item("class_name", ev.class_name)?;
                d.set_item("confidence", ev.confidence)?;
                d.set_item("timestamp_us", ev.timestamp_us)?;
                d.set_item("audio_path", ev.audio_path)?;
                d.set_item("frame", ev.frame)?;
                Ok(Some(d))
            }
            _ => Ok(None),
        }
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.stats();
        let d = PyDict::new(py);
        d.set_item("frames", s.frames)?;
        d.set_item("predictions", s.predictions)?;
        d.set_item("events", s.events)?;
        d.set_item("rejected_frames", s.rejected_frames)?;
        Ok(d)
    }
}

/// Runs the command-line tool in-process. Returns `(exit_code, stdout)`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> (i32, String) {
    py.detach(|| {
        let mut out = Vec::new();
        let argv = std::iter::once("mlagru".to_owned()).chain(args);
        let code = mlagru::cli::run_with_args(argv, &mut out);
        (code, String::from_utf8_lossy(&out).into_owned())
    })
}

#[pymodule]
fn mlagru_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FEATURE_DIM", ds::FEATURE_DIM)?;
    m.add("TIMESTEPS", ds::TIMESTEPS)?;
    m.add("NUM_CLASSES", ds::NUM_CLASSES)?;
    m.add("PROTOCOL_VERSION", PROTOCOL_VERSION)?;
    m.add("POSE", (ds::POSE.start, ds::POSE.end))?;
    m.add("LEFT_HAND", (ds::LEFT_HAND.start, ds::LEFT_HAND.end))?;
    m.add("RIGHT_HAND", (ds::RIGHT_HAND.start, ds::RIGHT_HAND.end))?;
    m.add("FACE", (ds::FACE.start, ds::FACE.end))?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add_function(wrap_pyfunction!(class_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(parse_class_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(encode_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(decode_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(save_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(encode_message, m)?)?;
    m.add_function(wrap_pyfunction!(encode_hello, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_messages, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Classifier>()?;
    m.add_class::<Engine>()?;
    Ok(())
}

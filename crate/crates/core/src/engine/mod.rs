//! Streaming inference: a 30-frame window, a prediction cadence, a
//! confidence gate and note events.

pub mod bench;
pub mod protocol;
mod queue;
pub mod server;

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{frames_to_matrix, ClassTable, DatasetError, LandmarkFrame, TIMESTEPS};
use crate::model::{ClassDistribution, GestureClassifier, ModelError};
use crate::numerics::Real;

pub use bench::{bench, render_bench_table, BenchError, BenchReport};
pub use queue::DropOldestQueue;
pub use server::{serve_connection, ServeConfig, Server, ServerError, SessionStats};

pub const DEFAULT_THRESHOLD: f64 = 0.7;
pub const DEFAULT_STRIDE: usize = TIMESTEPS;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("stride must be at least 1")]
    Stride,
    #[error("threshold {0} must lie in [0, 1]")]
    Threshold(f64),
    #[error("model expects {model} timesteps, the engine window holds {TIMESTEPS}")]
    Timesteps { model: usize },
    #[error("model has {model} classes but the class table lists {table}")]
    ClassCount { model: usize, table: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Number of predictions a stream of `frames` frames triggers.
pub fn expected_predictions(frames: usize, stride: usize) -> usize {
    if frames < TIMESTEPS {
        0
    } else {
        (frames - TIMESTEPS) / stride + 1
    }
}

/// The most recent [`TIMESTEPS`] frames and the cadence counter.
#[derive(Debug, Clone)]
pub struct FrameWindow {
    frames: VecDeque<LandmarkFrame>,
    stride: usize,
    total: u64,
}

impl FrameWindow {
    pub fn new(stride: usize) -> Result<Self, EngineError> {
        if stride == 0 {
            return Err(EngineError::Stride);
        }
        Ok(FrameWindow {
            frames: VecDeque::with_capacity(TIMESTEPS),
            stride,
            total: 0,
        })
    }

    /// Appends a frame; returns true when a prediction is due. The first
    /// prediction fires on frame 30, later ones every `stride` frames.
    pub fn push(&mut self, frame: LandmarkFrame) -> bool {
        if self.frames.len() == TIMESTEPS {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        self.total += 1;
        self.total >= TIMESTEPS as u64 && (self.total - TIMESTEPS as u64).is_multiple_of(self.stride as u64)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames_seen(&self) -> u64 {
        self.total
    }

    pub fn frames(&self) -> impl Iterator<Item = &LandmarkFrame> {
        self.frames.iter()
    }
}

/// A gesture the engine accepted as valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub class_index: usize,
    pub class_name: String,
    pub confidence: f32,
    /// Microseconds since the engine started (monotonic).
    pub timestamp_us: u64,
    pub audio_path: String,
    /// Stream position (1-based count of frames) that triggered the event.
    pub frame: u64,
}

/// Result of feeding one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Ingest {
    /// No prediction due yet.
    Buffered,
    /// A prediction ran but its confidence was under the threshold.
    BelowThreshold { class_index: usize, confidence: f32, frame: u64 },
    Event(NoteEvent),
}

impl Ingest {
    pub fn predicted(&self) -> bool {
        !matches!(self, Ingest::Buffered)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub frames: u64,
    pub predictions: u64,
    pub events: u64,
    pub rejected_frames: u64,
}

/// Per-stream inference state over a shared immutable model.
pub struct Engine<T = f32> {
    model: Arc<GestureClassifier<T>>,
    classes: Arc<ClassTable>,
    threshold: f64,
    window: FrameWindow,
    started: Instant,
    stats: EngineStats,
}

/// Checks that a model and class table belong together and fit the window.
pub fn check_model<T: Real>(model: &GestureClassifier<T>, classes: &ClassTable) -> Result<(), EngineError> {
    let arch = model.architecture();
    if arch.timesteps != TIMESTEPS {
        return Err(EngineError::Timesteps {
            model: arch.timesteps,
        });
    }
    if arch.num_classes != classes.len() {
        return Err(EngineError::ClassCount {
            model: arch.num_classes,
            table: classes.len(),
        });
    }
    Ok(())
}

impl<T: Real> Engine<T> {
    pub fn new(
        model: Arc<GestureClassifier<T>>,
        classes: Arc<ClassTable>,
        threshold: f64,
        stride: usize,
    ) -> Result<Self, EngineError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(EngineError::Threshold(threshold));
        }
        check_model(&model, &classes)?;
        Ok(Engine {
            model,
            classes,
            threshold,
            window: FrameWindow::new(stride)?,
            started: Instant::now(),
            stats: EngineStats::default(),
        })
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Feeds a validated frame.
    pub fn ingest(&mut self, frame: LandmarkFrame) -> Result<Ingest, EngineError> {
        self.stats.frames += 1;
        if !self.window.push(frame) {
            return Ok(Ingest::Buffered);
        }
        let dist = self.predict_window()?;
        self.stats.predictions += 1;
        let frame = self.window.frames_seen();
        let confidence = dist.confidence.as_f64() as f32;
        if dist.confidence.as_f64() < self.threshold {
            tracing::debug!(
                class = dist.index,
                confidence,
                frame,
                "prediction below confidence threshold"
            );
            return Ok(Ingest::BelowThreshold {
                class_index: dist.index,
                confidence,
                frame,
            });
        }
        self.stats.events += 1;
        Ok(Ingest::Event(NoteEvent {
            class_index: dist.index,
            class_name: self.classes.name(dist.index).unwrap_or_default().to_owned(),
            confidence,
            timestamp_us: self.started.elapsed().as_micros() as u64,
            audio_path: self
                .classes
                .audio_path(dist.index)
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            frame,
        }))
    }

    /// Validates raw values first; invalid frames are counted and rejected
    /// without touching the window.
    pub fn ingest_raw(&mut self, values: Vec<f32>) -> Result<Result<Ingest, DatasetError>, EngineError> {
        match LandmarkFrame::new(values) {
            Ok(f) => self.ingest(f).map(Ok),
            Err(e) => {
                self.stats.rejected_frames += 1;
                Ok(Err(e))
            }
        }
    }

    fn predict_window(&self) -> Result<ClassDistribution<T>, EngineError> {
        let seq = frames_to_matrix::<T>(self.window.frames());
        Ok(self.model.forward(&seq)?.distribution)
    }
}

/// Offline reference: slices `frames` into the windows the engine would
/// predict on and runs the model on each. Returns `(frame position,
/// distribution)` per window.
pub fn offline_windows<T: Real>(
    model: &GestureClassifier<T>,
    frames: &[LandmarkFrame],
    stride: usize,
) -> Result<Vec<(u64, ClassDistribution<T>)>, EngineError> {
    if stride == 0 {
        return Err(EngineError::Stride);
    }
    let mut out = Vec::new();
    let mut end = TIMESTEPS;
    while end <= frames.len() {
        let seq = frames_to_matrix::<T>(&frames[end - TIMESTEPS..end]);
        out.push((end as u64, model.forward(&seq)?.distribution));
        end += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Variant};

    #[test]
    fn cadence_law() {
        for stride in [1, 7, 15, 30, 31, 100] {
            for n in 0..200 {
                let mut w = FrameWindow::new(stride).unwrap();
                let fired = (0..n).filter(|_| w.push(LandmarkFrame::zeros())).count();
                assert_eq!(fired, expected_predictions(n, stride), "n={n} stride={stride}");
                assert!(w.len() <= TIMESTEPS);
            }
        }
        assert_eq!(expected_predictions(29, 30), 0);
        assert_eq!(expected_predictions(90, 30), 3);
        assert_eq!(expected_predictions(300, 30), 10);
        assert!(FrameWindow::new(0).is_err());
    }

    fn small_engine(threshold: f64) -> Engine<f32> {
        let model = GestureClassifier::<f32>::new(
            Architecture::standard(Variant::MlaGru),
            ClassTable::default().names().to_vec(),
            3,
        )
        .unwrap();
        Engine::new(Arc::new(model), Arc::new(ClassTable::default()), threshold, 30).unwrap()
    }

    #[test]
    fn first_29_frames_buffer_only() {
        let mut e = small_engine(0.0);
        for _ in 0..29 {
            assert_eq!(e.ingest(LandmarkFrame::zeros()).unwrap(), Ingest::Buffered);
        }
        match e.ingest(LandmarkFrame::zeros()).unwrap() {
            Ingest::Event(ev) => {
                assert_eq!(ev.frame, 30);
                assert_eq!(ev.class_name, ClassTable::default().name(ev.class_index).unwrap());
                assert!(ev.audio_path.ends_with(".wav"));
            }
            other => panic!("expected an event, got {other:?}"),
        }
        assert_eq!(e.stats().predictions, 1);
    }

    #[test]
    fn gate_suppresses_low_confidence() {
        // An untrained 21-way model is far from confident.
        let mut e = small_engine(0.99);
        let out: Vec<Ingest> = (0..30).map(|_| e.ingest(LandmarkFrame::zeros()).unwrap()).collect();
        assert!(matches!(out[29], Ingest::BelowThreshold { frame: 30, .. }));
        assert_eq!(e.stats().events, 0);
    }

    #[test]
    fn rejects_bad_frames_and_settings() {
        let mut e = small_engine(0.5);
        assert!(e.ingest_raw(vec![0.0; 10]).unwrap().is_err());
        let mut v = vec![0.0; crate::dataset::FEATURE_DIM];
        v[0] = f32::INFINITY;
        assert!(e.ingest_raw(v).unwrap().is_err());
        assert_eq!(e.stats().rejected_frames, 2);
        assert_eq!(e.stats().frames, 0);

        let model = Arc::new(
            GestureClassifier::<f32>::new(
                Architecture::standard(Variant::ClassicalGru),
                ClassTable::default().names().to_vec(),
                1,
            )
            .unwrap(),
        );
        let three = ClassTable::from_parts(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["a.wav".into(), "b.wav".into(), "c.wav".into()],
        )
        .unwrap();
        assert!(matches!(
            Engine::new(model.clone(), Arc::new(three), 0.7, 30),
            Err(EngineError::ClassCount { model: 21, table: 3 })
        ));
        assert!(Engine::new(model.clone(), Arc::new(ClassTable::default()), 1.5, 30).is_err());
        assert!(Engine::new(model, Arc::new(ClassTable::default()), 0.7, 0).is_err());
    }
}

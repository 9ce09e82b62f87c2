//! Landmark sequences, the class table and dataset I/O.
//!
//! A frame is the flattened output of holistic landmark extraction:
//!
//! | block      | offset range   | layout               |
//! |------------|----------------|----------------------|
//! | pose       | `[0, 132)`     | 33 × (x, y, z, vis)  |
//! | left hand  | `[132, 195)`   | 21 × (x, y, z)       |
//! | right hand | `[195, 258)`   | 21 × (x, y, z)       |
//! | face       | `[258, 1662)`  | 468 × (x, y, z)      |
//!
//! Missing detections are all-zero blocks.

mod classes;
mod gld;
mod split;
mod synth;

use std::ops::Range;

use thiserror::Error;

use crate::numerics::{Matrix, Real};

pub use classes::{ClassTable, NOTES, PITCHES};
pub use gld::{decode_dataset, encode_dataset, load_dataset, save_dataset, Dataset};
pub use split::{stratified_split, Split};
pub use synth::{synth_generate, SynthConfig, SIGNAL_FEATURES};

pub const POSE_LANDMARKS: usize = 33;
pub const HAND_LANDMARKS: usize = 21;
pub const FACE_LANDMARKS: usize = 468;
pub const POSE_VALUES: usize = 4;
pub const POINT_VALUES: usize = 3;

pub const POSE: Range<usize> = 0..POSE_LANDMARKS * POSE_VALUES;
pub const LEFT_HAND: Range<usize> = POSE.end..POSE.end + HAND_LANDMARKS * POINT_VALUES;
pub const RIGHT_HAND: Range<usize> = LEFT_HAND.end..LEFT_HAND.end + HAND_LANDMARKS * POINT_VALUES;
pub const FACE: Range<usize> = RIGHT_HAND.end..RIGHT_HAND.end + FACE_LANDMARKS * POINT_VALUES;

pub const FEATURE_DIM: usize = FACE.end;
pub const TIMESTEPS: usize = 30;
pub const NUM_CLASSES: usize = 21;

const _: () = assert!(FEATURE_DIM == 1662);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("frame has {0} features, expected {FEATURE_DIM}")]
    FrameLength(usize),
    #[error("frame contains a non-finite value at feature {0}")]
    NonFinite(usize),
    #[error("sequence has {0} frames, expected {TIMESTEPS}")]
    SequenceLength(usize),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("sample {0} has no label")]
    Unlabeled(usize),
    #[error("{block} block has {got} values, expected {expected}")]
    Block {
        block: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("class {class} has {count} sample(s); stratified splitting needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    TrainFraction(f64),
    #[error("class manifest: {0}")]
    Manifest(String),
}

/// One timestep of landmarks: exactly [`FEATURE_DIM`] finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame(Vec<f32>);

impl LandmarkFrame {
    pub fn new(values: Vec<f32>) -> Result<Self, DatasetError> {
        if values.len() != FEATURE_DIM {
            return Err(DatasetError::FrameLength(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite(i));
        }
        Ok(LandmarkFrame(values))
    }

    pub fn zeros() -> Self {
        LandmarkFrame(vec![0.0; FEATURE_DIM])
    }

    /// Assembles a frame from per-part blocks; `None` marks an absent
    /// detection and is zero-filled.
    pub fn from_blocks(
        pose: Option<&[f32]>,
        left_hand: Option<&[f32]>,
        right_hand: Option<&[f32]>,
        face: Option<&[f32]>,
    ) -> Result<Self, DatasetError> {
        let mut values = vec![0.0f32; FEATURE_DIM];
        for (name, range, block) in [
            ("pose", POSE, pose),
            ("left hand", LEFT_HAND, left_hand),
            ("right hand", RIGHT_HAND, right_hand),
            ("face", FACE, face),
        ] {
            if let Some(b) = block {
                if b.len() != range.len() {
                    return Err(DatasetError::Block {
                        block: name,
                        got: b.len(),
                        expected: range.len(),
                    });
                }
                values[range].copy_from_slice(b);
            }
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn pose(&self) -> &[f32] {
        &self.0[POSE]
    }

    pub fn left_hand(&self) -> &[f32] {
        &self.0[LEFT_HAND]
    }

    pub fn right_hand(&self) -> &[f32] {
        &self.0[RIGHT_HAND]
    }

    pub fn face(&self) -> &[f32] {
        &self.0[FACE]
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// A fixed-length window of frames, the unit of classification.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSequence {
    frames: Vec<LandmarkFrame>,
    pub label: Option<usize>,
    pub source_id: Option<String>,
}

impl GestureSequence {
    pub fn new(frames: Vec<LandmarkFrame>, label: Option<usize>) -> Result<Self, DatasetError> {
        if frames.len() != TIMESTEPS {
            return Err(DatasetError::SequenceLength(frames.len()));
        }
        if let Some(l) = label {
            if l >= NUM_CLASSES {
                return Err(DatasetError::LabelOutOfRange {
                    label: l,
                    num_classes: NUM_CLASSES,
                });
            }
        }
        Ok(GestureSequence {
            frames,
            label,
            source_id: None,
        })
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    /// `TIMESTEPS × FEATURE_DIM` matrix in the requested width.
    pub fn to_matrix<T: Real>(&self) -> Matrix<T> {
        let data = self
            .frames
            .iter()
            .flat_map(|f| f.values().iter().map(|&v| T::lit(v as f64)))
            .collect();
        Matrix::from_vec(self.frames.len(), FEATURE_DIM, data).expect("frame layout invariant")
    }
}

/// Builds a model input from any run of frames (used by the streaming
/// window, which may hold frames that never formed a stored sequence).
pub fn frames_to_matrix<'a, T: Real>(frames: impl IntoIterator<Item = &'a LandmarkFrame>) -> Matrix<T> {
    let mut data = Vec::with_capacity(TIMESTEPS * FEATURE_DIM);
    let mut rows = 0;
    for f in frames {
        data.extend(f.values().iter().map(|&v| T::lit(v as f64)));
        rows += 1;
    }
    Matrix::from_vec(rows, FEATURE_DIM, data).expect("frame layout invariant")
}

/// Per-class sample counts.
pub fn class_histogram(samples: &[GestureSequence], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for s in samples {
        if let Some(l) = s.label {
            if l < num_classes {
                h[l] += 1;
            }
        }
    }
    h
}

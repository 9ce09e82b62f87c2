//! `GLD1` landmark dataset files.
//!
//! ```text
//! magic         b"GLD1"
//! version       u16 (= 1)
//! sample_count  u32
//! timesteps     u32 (= 30)
//! feature_dim   u32 (= 1662)
//! num_classes   u32 (= 21)
//! samples       sample_count × (u8 label, timesteps × feature_dim f32 LE)
//! crc32         u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{
    class_histogram, DatasetError, GestureSequence, LandmarkFrame, FEATURE_DIM, NUM_CLASSES,
    TIMESTEPS,
};
use crate::model::format::{FormatError, Reader};

pub const MAGIC: &[u8; 4] = b"GLD1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4;
const SAMPLE_LEN: usize = 1 + TIMESTEPS * FEATURE_DIM * 4;

/// Labelled sequences as stored in a GLD1 file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<GestureSequence>,
}

impl Dataset {
    pub fn new(samples: Vec<GestureSequence>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn histogram(&self) -> Vec<usize> {
        class_histogram(&self.samples, NUM_CLASSES)
    }

    /// SHA-256 of the encoded file contents, used to tie reports and
    /// manifests to the exact data they were computed on.
    pub fn content_hash(&self) -> Result<String, FormatError> {
        Ok(crate::io_util::sha256_hex(&encode_dataset(&self.samples)?))
    }
}

pub fn encode_dataset(samples: &[GestureSequence]) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * SAMPLE_LEN + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [samples.len(), TIMESTEPS, FEATURE_DIM, NUM_CLASSES] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (i, s) in samples.iter().enumerate() {
        let label = s.label.ok_or(DatasetError::Unlabeled(i))?;
        out.push(label as u8);
        for f in s.frames() {
            for v in f.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let (timesteps, features, classes) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if (timesteps, features, classes) != (TIMESTEPS, FEATURE_DIM, NUM_CLASSES) {
        return Err(FormatError::Geometry(format!(
            "file declares {timesteps} timesteps × {features} features, {classes} classes; \
             expected {TIMESTEPS} × {FEATURE_DIM}, {NUM_CLASSES}"
        )));
    }
    let body = count
        .checked_mul(SAMPLE_LEN)
        .ok_or_else(|| FormatError::Geometry(format!("sample count {count} too large")))?;
    if r.remaining() < body + 4 {
        return Err(FormatError::Truncated {
            offset: r.position(),
            needed: body + 4,
            available: r.remaining(),
        });
    }
    let crc_offset = r.position() + body;
    let computed = crc32fast::hash(&bytes[..crc_offset]);

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let label = r.take(1)?[0] as usize;
        if label >= NUM_CLASSES {
            return Err(DatasetError::LabelOutOfRange {
                label,
                num_classes: NUM_CLASSES,
            }
            .into());
        }
        let raw = r.take(TIMESTEPS * FEATURE_DIM * 4)?;
        let frames = raw
            .chunks_exact(FEATURE_DIM * 4)
            .map(|chunk| {
                LandmarkFrame::new(
                    chunk
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(GestureSequence::new(frames, Some(label))?);
    }
    let stored = r.u32()?;
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(Dataset { samples })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, FormatError> {
    let path = path.as_ref();
    let ds = decode_dataset(&fs::read(path)?)?;
    if ds.is_empty() {
        tracing::warn!(path = %path.display(), "dataset contains no samples");
    } else {
        tracing::info!(
            path = %path.display(),
            samples = ds.len(),
            histogram = ?ds.histogram(),
            "loaded dataset"
        );
    }
    Ok(ds)
}

pub fn save_dataset(samples: &[GestureSequence], path: impl AsRef<Path>) -> Result<(), FormatError> {
    let bytes = encode_dataset(samples)?;
    crate::io_util::write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_sample(label: usize) -> GestureSequence {
        GestureSequence::new(vec![LandmarkFrame::zeros(); TIMESTEPS], Some(label)).unwrap()
    }

    #[test]
    fn empty_dataset_round_trips() {
        let bytes = encode_dataset(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert!(decode_dataset(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_zero_sequence_round_trips() {
        let bytes = encode_dataset(&[zero_sample(4)]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + SAMPLE_LEN + 4);
        let ds = decode_dataset(&bytes).unwrap();
        assert_eq!(ds.samples, vec![zero_sample(4)]);
        assert_eq!(encode_dataset(&ds.samples).unwrap(), bytes);
    }

    #[test]
    fn unlabeled_samples_cannot_be_saved() {
        let s = GestureSequence::new(vec![LandmarkFrame::zeros(); TIMESTEPS], None).unwrap();
        assert!(matches!(
            encode_dataset(&[s]),
            Err(FormatError::Dataset(DatasetError::Unlabeled(0)))
        ));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_dataset(&[zero_sample(1), zero_sample(2)]).unwrap();

        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(matches!(decode_dataset(&bad), Err(FormatError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_dataset(&bad), Err(FormatError::UnsupportedVersion(2))));

        let mut bad = bytes.clone();
        bad[14..18].copy_from_slice(&1661u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bad), Err(FormatError::Geometry(_))));

        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 5]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(decode_dataset(&bytes[..10]), Err(FormatError::Truncated { .. })));

        let mut bad = bytes.clone();
        bad[HEADER_LEN] = 21;
        assert!(matches!(
            decode_dataset(&bad),
            Err(FormatError::Dataset(DatasetError::LabelOutOfRange { label: 21, .. }))
        ));

        let mut bad = bytes.clone();
        bad[HEADER_LEN + 100] ^= 1;
        assert!(matches!(decode_dataset(&bad), Err(FormatError::Checksum { .. })));

        let mut bad = bytes.clone();
        let nan = f32::NAN.to_le_bytes();
        bad[HEADER_LEN + 1..HEADER_LEN + 5].copy_from_slice(&nan);
        assert!(matches!(
            decode_dataset(&bad),
            Err(FormatError::Dataset(DatasetError::NonFinite(0)))
        ));
    }
}

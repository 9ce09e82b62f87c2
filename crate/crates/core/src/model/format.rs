//! `GMD1` model files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        b"GMD1"
//! version      u16   (= 1)
//! float width  u16   (4 = f32, 8 = f64)
//! num_classes  u32
//! timesteps    u32
//! input_dim    u32
//! class names  num_classes × (u16 byte length, UTF-8 bytes)
//! shape table  33 × (u32 rows, u32 cols), in ParamSet::tensors() order
//! payload      every tensor, row-major, in the same order
//! crc32        u32 over the payload bytes
//! ```
//!
//! Layer widths are recovered from the shape table. The variant follows
//! from the width of dense1's input: the concatenated GRU width for the
//! attention model, the last GRU width for the baseline.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Architecture, GestureClassifier, ModelError, ParamSet, Variant, TENSOR_COUNT};
use crate::numerics::{FloatWidth, Matrix, Real};

pub const MAGIC: &[u8; 4] = b"GMD1";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a GMD1 model file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported GMD1 version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported float width code {0}")]
    UnsupportedWidth(u16),
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("shape table inconsistent: {0}")]
    ShapeTable(String),
    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("class name is not valid UTF-8")]
    InvalidUtf8,
    #[error("class name longer than 65535 bytes")]
    NameTooLong,
    #[error("header geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.bytes.len() - self.pos,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }
}

/// Serialises a model in its own float width.
pub fn encode<T: Real>(model: &GestureClassifier<T>) -> Result<Vec<u8>> {
    let arch = model.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::WIDTH.code().to_le_bytes());
    for v in [arch.num_classes, arch.timesteps, arch.input_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for name in model.class_names() {
        let len = u16::try_from(name.len()).map_err(|_| FormatError::NameTooLong)?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    let tensors = model.params().tensors();
    for m in &tensors {
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    }
    let payload_start = out.len();
    for m in &tensors {
        for v in m.as_slice() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses a model stored in any supported width and converts it to `T`.
/// The conversion is the identity when the widths agree.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<GestureClassifier<T>> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let width_code = r.u16()?;
    let width = FloatWidth::from_code(width_code).ok_or(FormatError::UnsupportedWidth(width_code))?;
    let num_classes = r.u32()? as usize;
    let timesteps = r.u32()? as usize;
    let input_dim = r.u32()? as usize;

    let mut class_names = Vec::with_capacity(num_classes.min(1024));
    for _ in 0..num_classes {
        let len = r.u16()? as usize;
        let raw = r.take(len)?;
        class_names.push(
            std::str::from_utf8(raw)
                .map_err(|_| FormatError::InvalidUtf8)?
                .to_owned(),
        );
    }

    let mut shapes = Vec::with_capacity(TENSOR_COUNT);
    for _ in 0..TENSOR_COUNT {
        shapes.push((r.u32()? as usize, r.u32()? as usize));
    }
    let arch = infer_architecture(&shapes, num_classes, timesteps, input_dim)?;
    let names = ParamSet::<f64>::tensor_names();
    for ((shape, expected), name) in shapes.iter().zip(ParamSet::<f64>::shapes_for(&arch)).zip(&names) {
        if *shape != expected {
            return Err(FormatError::ShapeTable(format!(
                "{name} is {shape:?}, architecture implies {expected:?}"
            )));
        }
    }

    let payload_len = shapes
        .iter()
        .try_fold(0usize, |acc, (a, b)| a.checked_mul(*b).and_then(|n| acc.checked_add(n)))
        .and_then(|n| n.checked_mul(width.bytes()))
        .ok_or_else(|| FormatError::ShapeTable("tensor sizes overflow".into()))?;
    if r.remaining() < payload_len + 4 {
        return Err(FormatError::Truncated {
            offset: r.position(),
            needed: payload_len + 4,
            available: r.remaining(),
        });
    }
    let payload = r.take(payload_len)?;
    let stored = r.u32()?;
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }

    let mut params = ParamSet::<T>::zeros(&arch);
    let mut chunks = payload.chunks_exact(width.bytes());
    for m in params.tensors_mut() {
        fill_tensor(m, &mut chunks, width);
    }
    Ok(GestureClassifier::from_params(arch, params, class_names)?)
}

fn fill_tensor<T: Real>(
    m: &mut Matrix<T>,
    chunks: &mut std::slice::ChunksExact<'_, u8>,
    width: FloatWidth,
) {
    for v in m.as_mut_slice() {
        let c = chunks.next().expect("payload length checked");
        *v = match width {
            FloatWidth::F64 => T::lit(f64::read_le(c)),
            FloatWidth::F32 => T::lit(f32::read_le(c) as f64),
        };
    }
}

fn infer_architecture(
    shapes: &[(usize, usize)],
    num_classes: usize,
    timesteps: usize,
    input_dim: usize,
) -> Result<Architecture> {
    // gru_k.W_r sits at index 9k; dense1.W at 27, dense2.W at 29, output.W at 31.
    let units = [shapes[0].0, shapes[9].0, shapes[18].0];
    let (d1, head_in) = shapes[27];
    let d2 = shapes[29].0;
    let variant = if head_in == units.iter().sum::<usize>() {
        Variant::MlaGru
    } else if head_in == units[2] {
        Variant::ClassicalGru
    } else {
        return Err(FormatError::ShapeTable(format!(
            "dense1 input width {head_in} matches neither the concatenated GRU width nor the last GRU layer"
        )));
    };
    let arch = Architecture {
        variant,
        timesteps,
        input_dim,
        gru_units: units,
        dense_units: [d1, d2],
        num_classes,
    };
    arch.validate()
        .map_err(|e| FormatError::ShapeTable(e.to_string()))?;
    Ok(arch)
}

impl<T: Real> GestureClassifier<T> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = encode(self)?;
        crate::io_util::write_atomic(path.as_ref(), &bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> GestureClassifier<f64> {
        let arch = Architecture {
            variant,
            timesteps: 3,
            input_dim: 4,
            gru_units: [2, 3, 2],
            dense_units: [5, 4],
            num_classes: 3,
        };
        GestureClassifier::new(arch, vec!["a".into(), "b".into(), "ç".into()], 17).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in [Variant::MlaGru, Variant::ClassicalGru] {
            let m = tiny(variant);
            let bytes = encode(&m).unwrap();
            let back: GestureClassifier<f64> = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn f32_round_trip() {
        let m = tiny(Variant::MlaGru).cast::<f32>();
        let bytes = encode(&m).unwrap();
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 4);
        let back: GestureClassifier<f32> = decode(&bytes).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&tiny(Variant::MlaGru)).unwrap();
        assert_eq!(&bytes[..4], b"GMD1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 8);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(u16::from_le_bytes([bytes[20], bytes[21]]), 1);
        assert_eq!(bytes[22], b'a');
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&tiny(Variant::MlaGru)).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f64>(&bad), Err(FormatError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode::<f64>(&bad),
            Err(FormatError::UnsupportedVersion(9))
        ));

        for cut in [3, 21, 60, bytes.len() - 1] {
            assert!(
                matches!(decode::<f64>(&bytes[..cut]), Err(FormatError::Truncated { .. })),
                "cut at {cut}"
            );
        }

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 10] ^= 0x40;
        assert!(matches!(decode::<f64>(&bad), Err(FormatError::Checksum { .. })));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode::<f64>(&bad), Err(FormatError::TrailingBytes(1))));
    }

    #[test]
    fn inconsistent_shape_table_is_rejected() {
        let bytes = encode(&tiny(Variant::MlaGru)).unwrap();
        // Class names "a", "b", "ç" take 2+1 + 2+1 + 2+2 bytes after the 20-byte header.
        let table = 20 + 10;
        // Second tensor (gru1.U_r) rows: claim 3 instead of 2.
        let mut bad = bytes.clone();
        bad[table + 8..table + 12].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(decode::<f64>(&bad), Err(FormatError::ShapeTable(_))));
    }
}

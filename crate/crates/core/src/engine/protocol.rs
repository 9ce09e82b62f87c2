//! Length-prefixed wire protocol between the engine and capture clients.
//!
//! Every message is `u32 payload length | u8 type | payload`, little-endian.
//! The length counts payload bytes only.
//!
//! | type | name      | payload                                                     |
//! |------|-----------|-------------------------------------------------------------|
//! | 0x00 | HELLO     | u16 version, u32 feature_dim, u32 timesteps                 |
//! | 0x01 | FRAME     | u64 client timestamp µs, feature_dim × f32                  |
//! | 0x80 | HELLO-ACK | u32 class count, count × (u16 length, UTF-8 name)           |
//! | 0x81 | EVENT     | u64 engine µs, u32 class, f32 confidence, u16+name, u16+path |
//! | 0x82 | STATUS    | u32 frames received, u32 predictions, u32 frames dropped    |
//! | 0xFF | ERROR     | u16 code, u16 length, UTF-8 message                         |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::dataset::FEATURE_DIM;

pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on accepted payloads; a full FRAME is 6656 bytes.
pub const MAX_PAYLOAD: usize = 1 << 20;

pub const TYPE_HELLO: u8 = 0x00;
pub const TYPE_FRAME: u8 = 0x01;
pub const TYPE_HELLO_ACK: u8 = 0x80;
pub const TYPE_EVENT: u8 = 0x81;
pub const TYPE_STATUS: u8 = 0x82;
pub const TYPE_ERROR: u8 = 0xFF;

/// Codes carried by ERROR messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    /// HELLO announced another protocol version. The connection is closed.
    VersionMismatch = 1,
    /// HELLO announced another frame geometry. The connection is closed.
    DimensionMismatch = 2,
    /// A FRAME had the wrong size or non-finite values. The frame is
    /// skipped and the stream continues.
    MalformedFrame = 3,
    /// Unknown message type, oversized payload or out-of-order message.
    /// The connection is closed.
    ProtocolViolation = 4,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        Some(match v {
            1 => ErrorCode::VersionMismatch,
            2 => ErrorCode::DimensionMismatch,
            3 => ErrorCode::MalformedFrame,
            4 => ErrorCode::ProtocolViolation,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        version: u16,
        feature_dim: u32,
        timesteps: u32,
    },
    Frame {
        timestamp_us: u64,
        values: Vec<f32>,
    },
    HelloAck {
        class_names: Vec<String>,
    },
    Event {
        timestamp_us: u64,
        class_index: u32,
        confidence: f32,
        class_name: String,
        audio_path: String,
    },
    Status {
        frames_received: u32,
        predictions: u32,
        frames_dropped: u32,
    },
    Error {
        code: u16,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("connection closed mid-message")]
    UnexpectedEof,
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("malformed {kind} payload: {detail}")]
    Malformed { kind: &'static str, detail: String },
    #[error("string of {0} bytes does not fit a u16 length prefix")]
    StringTooLong(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ProtocolError {
    /// Malformed FRAME payloads are recoverable; everything else ends the
    /// connection.
    pub fn is_malformed_frame(&self) -> bool {
        matches!(self, ProtocolError::Malformed { kind: "FRAME", .. })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), ProtocolError> {
    let len = u16::try_from(s.len()).map_err(|_| ProtocolError::StringTooLong(s.len()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Hello { .. } => TYPE_HELLO,
            Message::Frame { .. } => TYPE_FRAME,
            Message::HelloAck { .. } => TYPE_HELLO_ACK,
            Message::Event { .. } => TYPE_EVENT,
            Message::Status { .. } => TYPE_STATUS,
            Message::Error { .. } => TYPE_ERROR,
        }
    }

    pub fn hello() -> Self {
        Message::Hello {
            version: PROTOCOL_VERSION,
            feature_dim: FEATURE_DIM as u32,
            timesteps: crate::dataset::TIMESTEPS as u32,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error {
            code: code as u16,
            message: message.into(),
        }
    }

    fn payload(&self) -> Result<Vec<u8>, ProtocolError> {
        let mut p = Vec::new();
        match self {
            Message::Hello {
                version,
                feature_dim,
                timesteps,
            } => {
                p.extend_from_slice(&version.to_le_bytes());
                p.extend_from_slice(&feature_dim.to_le_bytes());
                p.extend_from_slice(&timesteps.to_le_bytes());
            }
            Message::Frame {
                timestamp_us,
                values,
            } => {
                p.reserve(8 + 4 * values.len());
                p.extend_from_slice(&timestamp_us.to_le_bytes());
                for v in values {
                    p.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::HelloAck { class_names } => {
                p.extend_from_slice(&(class_names.len() as u32).to_le_bytes());
                for n in class_names {
                    put_str(&mut p, n)?;
                }
            }
            Message::Event {
                timestamp_us,
                class_index,
                confidence,
                class_name,
                audio_path,
            } => {
                p.extend_from_slice(&timestamp_us.to_le_bytes());
                p.extend_from_slice(&class_index.to_le_bytes());
                p.extend_from_slice(&confidence.to_le_bytes());
                put_str(&mut p, class_name)?;
                put_str(&mut p, audio_path)?;
            }
            Message::Status {
                frames_received,
                predictions,
                frames_dropped,
            } => {
                for v in [frames_received, predictions, frames_dropped] {
                    p.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::Error { code, message } => {
                p.extend_from_slice(&code.to_le_bytes());
                put_str(&mut p, message)?;
            }
        }
        Ok(p)
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        let payload = self.payload()?;
        if payload.len() > MAX_PAYLOAD {
            return Err(ProtocolError::TooLarge(payload.len()));
        }
        let mut out = Vec::with_capacity(5 + payload.len());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.push(self.type_byte());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ProtocolError> {
        w.write_all(&self.encode()?)?;
        Ok(())
    }

    pub fn decode(kind: u8, payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor::new(payload, kind_name(kind)?);
        let msg = match kind {
            TYPE_HELLO => Message::Hello {
                version: c.u16()?,
                feature_dim: c.u32()?,
                timesteps: c.u32()?,
            },
            TYPE_FRAME => {
                let timestamp_us = c.u64()?;
                let rest = c.rest();
                if rest.len() != FEATURE_DIM * 4 {
                    return Err(ProtocolError::Malformed {
                        kind: "FRAME",
                        detail: format!("{} value bytes, expected {}", rest.len(), FEATURE_DIM * 4),
                    });
                }
                let values: Vec<f32> = rest
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(ProtocolError::Malformed {
                        kind: "FRAME",
                        detail: format!("non-finite value at feature {i}"),
                    });
                }
                return Ok(Message::Frame {
                    timestamp_us,
                    values,
                });
            }
            TYPE_HELLO_ACK => {
                let n = c.u32()? as usize;
                let mut class_names = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    class_names.push(c.string()?);
                }
                Message::HelloAck { class_names }
            }
            TYPE_EVENT => Message::Event {
                timestamp_us: c.u64()?,
                class_index: c.u32()?,
                confidence: f32::from_bits(c.u32()?),
                class_name: c.string()?,
                audio_path: c.string()?,
            },
            TYPE_STATUS => Message::Status {
                frames_received: c.u32()?,
                predictions: c.u32()?,
                frames_dropped: c.u32()?,
            },
            TYPE_ERROR => Message::Error {
                code: c.u16()?,
                message: c.string()?,
            },
            other => return Err(ProtocolError::UnknownType(other)),
        };
        c.finish()?;
        Ok(msg)
    }
}

fn kind_name(kind: u8) -> Result<&'static str, ProtocolError> {
    Ok(match kind {
        TYPE_HELLO => "HELLO",
        TYPE_FRAME => "FRAME",
        TYPE_HELLO_ACK => "HELLO-ACK",
        TYPE_EVENT => "EVENT",
        TYPE_STATUS => "STATUS",
        TYPE_ERROR => "ERROR",
        other => return Err(ProtocolError::UnknownType(other)),
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Cursor { buf, pos: 0, kind }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() - self.pos < n {
            return Err(ProtocolError::Malformed {
                kind: self.kind,
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ProtocolError> {
        let n = self.u16()? as usize;
        let kind = self.kind;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ProtocolError::Malformed {
            kind,
            detail: "invalid UTF-8".into(),
        })
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos != self.buf.len() {
            return Err(ProtocolError::Malformed {
                kind: self.kind,
                detail: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Reads one message. `Ok(None)` on a clean end of stream between messages.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, ProtocolError> {
    let mut header = [0u8; 5];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::UnexpectedEof),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    let kind = header[4];
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::UnexpectedEof,
        _ => e.into(),
    })?;
    Message::decode(kind, &payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(m: Message) {
        let bytes = m.encode().unwrap();
        let back = read_message(&mut &bytes[..]).unwrap().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn every_message_round_trips() {
        round_trip(Message::hello());
        round_trip(Message::Frame {
            timestamp_us: 123_456_789,
            values: (0..FEATURE_DIM).map(|i| i as f32 * 0.001).collect(),
        });
        round_trip(Message::HelloAck {
            class_names: vec!["High-Do".into(), "Mid-Do".into()],
        });
        round_trip(Message::Event {
            timestamp_us: 42,
            class_index: 7,
            confidence: 0.875,
            class_name: "Mid-Mi".into(),
            audio_path: "sounds/Mid-Mi.wav".into(),
        });
        round_trip(Message::Status {
            frames_received: 90,
            predictions: 3,
            frames_dropped: 0,
        });
        round_trip(Message::error(ErrorCode::VersionMismatch, "expected version 1"));
    }

    #[test]
    fn header_layout() {
        let bytes = Message::Status {
            frames_received: 1,
            predictions: 2,
            frames_dropped: 3,
        }
        .encode()
        .unwrap();
        assert_eq!(&bytes[..5], &[12, 0, 0, 0, TYPE_STATUS]);
        assert_eq!(&bytes[5..9], &[1, 0, 0, 0]);
        let hello = Message::hello().encode().unwrap();
        assert_eq!(hello, vec![10, 0, 0, 0, 0, 1, 0, 0x7e, 0x06, 0, 0, 30, 0, 0, 0]);
        let frame = Message::Frame {
            timestamp_us: 0,
            values: vec![0.0; FEATURE_DIM],
        }
        .encode()
        .unwrap();
        assert_eq!(frame.len(), 5 + 8 + 6648);
    }

    #[test]
    fn malformed_frames_are_recoverable() {
        let mut payload = 5u64.to_le_bytes().to_vec();
        payload.extend(std::iter::repeat_n(0u8, 4 * 10));
        let err = Message::decode(TYPE_FRAME, &payload).unwrap_err();
        assert!(err.is_malformed_frame());

        let mut values = vec![0.0f32; FEATURE_DIM];
        values[3] = f32::NAN;
        let bytes = Message::Frame {
            timestamp_us: 1,
            values,
        }
        .encode()
        .unwrap();
        let err = read_message(&mut &bytes[..]).unwrap_err();
        assert!(err.is_malformed_frame());

        let err = Message::decode(0x42, &[]).unwrap_err();
        assert!(matches!(err, ProtocolError::UnknownType(0x42)));
        assert!(!err.is_malformed_frame());
    }

    #[test]
    fn stream_boundaries() {
        assert!(read_message(&mut &[][..]).unwrap().is_none());
        let bytes = Message::hello().encode().unwrap();
        assert!(matches!(
            read_message(&mut &bytes[..7]),
            Err(ProtocolError::UnexpectedEof)
        ));
        let mut huge = ((MAX_PAYLOAD + 1) as u32).to_le_bytes().to_vec();
        huge.push(TYPE_FRAME);
        assert!(matches!(read_message(&mut &huge[..]), Err(ProtocolError::TooLarge(_))));
        let mut extra = Message::hello().encode().unwrap();
        extra[0] += 1;
        extra.push(0);
        assert!(matches!(
            read_message(&mut &extra[..]),
            Err(ProtocolError::Malformed { kind: "HELLO", .. })
        ));
    }
}

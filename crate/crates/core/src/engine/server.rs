//! TCP front end for [`Engine`].
//!
//! Each connection gets a reader thread (frame intake) and a worker thread
//! (inference and replies) joined by a [`DropOldestQueue`]. The reader never
//! waits for inference or for the client to drain its socket: if the worker
//! falls behind, the oldest queued frames are discarded and reported in
//! STATUS messages.

use std::io::{self, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::{read_message, ErrorCode, Message, ProtocolError, PROTOCOL_VERSION};
use super::{check_model, DropOldestQueue, Engine, EngineError, Ingest, DEFAULT_STRIDE, DEFAULT_THRESHOLD};
use crate::dataset::{ClassTable, LandmarkFrame, FEATURE_DIM, TIMESTEPS};
use crate::model::GestureClassifier;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen: {0}")]
    Bind(io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    pub threshold: f64,
    pub stride: usize,
    /// Frames buffered between intake and inference per connection.
    pub queue_capacity: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            threshold: DEFAULT_THRESHOLD,
            stride: DEFAULT_STRIDE,
            queue_capacity: 256,
        }
    }
}

/// Totals for one connection or, summed, for a whole server run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub connections: u64,
    pub frames_received: u64,
    pub malformed_frames: u64,
    pub frames_dropped: u64,
    pub predictions: u64,
    pub events: u64,
}

impl SessionStats {
    fn add(&mut self, o: &SessionStats) {
        self.connections += o.connections;
        self.frames_received += o.frames_received;
        self.malformed_frames += o.malformed_frames;
        self.frames_dropped += o.frames_dropped;
        self.predictions += o.predictions;
        self.events += o.events;
    }
}

pub struct Server {
    listener: TcpListener,
    model: Arc<GestureClassifier<f32>>,
    classes: Arc<ClassTable>,
    config: ServeConfig,
}

impl Server {
    /// Validates the model against the class table and binds. Refuses to
    /// start on any mismatch.
    pub fn bind(
        addr: impl ToSocketAddrs,
        model: Arc<GestureClassifier<f32>>,
        classes: Arc<ClassTable>,
        config: ServeConfig,
    ) -> Result<Self, ServerError> {
        check_model(&model, &classes)?;
        if config.queue_capacity == 0 {
            return Err(ServerError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                "queue capacity must be positive",
            )));
        }
        // Surfaces bad threshold/stride before accepting anyone.
        Engine::new(model.clone(), classes.clone(), config.threshold, config.stride)?;
        let listener = TcpListener::bind(addr).map_err(ServerError::Bind)?;
        Ok(Server {
            listener,
            model,
            classes,
            config,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until `shutdown` is set, then closes the intake
    /// side of every open connection, waits for them to finish and returns
    /// the accumulated statistics.
    pub fn run(&self, shutdown: &AtomicBool) -> Result<SessionStats, ServerError> {
        self.listener.set_nonblocking(true)?;
        let mut live: Vec<(thread::JoinHandle<SessionStats>, TcpStream)> = Vec::new();
        let mut total = SessionStats::default();
        while !shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let _ = stream.set_nodelay(true);
                    let handle_stream = stream.try_clone()?;
                    let (model, classes, config) = (self.model.clone(), self.classes.clone(), self.config);
                    tracing::info!(%peer, "connection opened");
                    let h = thread::spawn(move || {
                        let stats = serve_connection(handle_stream, model, classes, config);
                        tracing::info!(%peer, ?stats, "connection closed");
                        stats
                    });
                    live.push((h, stream));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
            // Reap finished connections.
            let mut i = 0;
            while i < live.len() {
                if live[i].0.is_finished() {
                    let (h, _) = live.swap_remove(i);
                    total.add(&h.join().unwrap_or_default());
                } else {
                    i += 1;
                }
            }
        }
        for (_, s) in &live {
            let _ = s.shutdown(Shutdown::Read);
        }
        for (h, _) in live {
            total.add(&h.join().unwrap_or_default());
        }
        tracing::info!(?total, "server stopped");
        Ok(total)
    }
}

type Writer = Arc<Mutex<TcpStream>>;

fn send(w: &Writer, m: &Message) -> bool {
    let mut s = w.lock().expect("writer lock");
    match m.write_to(&mut *s) {
        Ok(()) => s.flush().is_ok(),
        Err(e) => {
            tracing::debug!(error = %e, "write failed");
            false
        }
    }
}

/// Runs the protocol on one accepted stream until EOF, a fatal protocol
/// error or a write failure.
pub fn serve_connection(
    stream: TcpStream,
    model: Arc<GestureClassifier<f32>>,
    classes: Arc<ClassTable>,
    config: ServeConfig,
) -> SessionStats {
    let mut stats = SessionStats {
        connections: 1,
        ..SessionStats::default()
    };
    let writer: Writer = match stream.try_clone() {
        Ok(s) => Arc::new(Mutex::new(s)),
        Err(_) => return stats,
    };
    let mut reader = BufReader::with_capacity(64 * 1024, stream);

    let fatal = |w: &Writer, code: ErrorCode, msg: String| {
        tracing::warn!(code = code as u16, %msg, "closing connection");
        send(w, &Message::error(code, msg));
        let _ = w.lock().expect("writer lock").shutdown(Shutdown::Both);
    };

    match read_message(&mut reader) {
        Ok(Some(Message::Hello {
            version,
            feature_dim,
            timesteps,
        })) => {
            if version != PROTOCOL_VERSION {
                fatal(
                    &writer,
                    ErrorCode::VersionMismatch,
                    format!("protocol version {version} unsupported; engine speaks {PROTOCOL_VERSION}"),
                );
                return stats;
            }
            if feature_dim as usize != FEATURE_DIM || timesteps as usize != TIMESTEPS {
                fatal(
                    &writer,
                    ErrorCode::DimensionMismatch,
                    format!(
                        "client sends {feature_dim} features × {timesteps} timesteps; \
                         engine expects {FEATURE_DIM} × {TIMESTEPS}"
                    ),
                );
                return stats;
            }
            let ack = Message::HelloAck {
                class_names: classes.names().to_vec(),
            };
            if !send(&writer, &ack) {
                return stats;
            }
        }
        Ok(None) => return stats,
        Ok(Some(other)) => {
            fatal(
                &writer,
                ErrorCode::ProtocolViolation,
                format!("expected HELLO, got message type 0x{:02x}", other.type_byte()),
            );
            return stats;
        }
        Err(e) => {
            fatal(&writer, ErrorCode::ProtocolViolation, e.to_string());
            return stats;
        }
    }

    let queue = Arc::new(DropOldestQueue::<LandmarkFrame>::new(config.queue_capacity));
    let received = Arc::new(AtomicU64::new(0));
    let worker = {
        let (queue, received, writer) = (queue.clone(), received.clone(), writer.clone());
        thread::spawn(move || {
            let mut engine = match Engine::new(model, classes, config.threshold, config.stride) {
                Ok(e) => e,
                Err(e) => {
                    tracing::error!(error = %e, "engine setup failed");
                    return Default::default();
                }
            };
            let mut writable = true;
            while let Some(frame) = queue.pop() {
                let outcome = match engine.ingest(frame) {
                    Ok(o) => o,
                    Err(e) => {
                        tracing::error!(error = %e, "inference failed");
                        continue;
                    }
                };
                if !outcome.predicted() || !writable {
                    continue;
                }
                if let Ingest::Event(ev) = &outcome {
                    tracing::info!(class = %ev.class_name, confidence = ev.confidence, frame = ev.frame, "note event");
                    writable &= send(
                        &writer,
                        &Message::Event {
                            timestamp_us: ev.timestamp_us,
                            class_index: ev.class_index as u32,
                            confidence: ev.confidence,
                            class_name: ev.class_name.clone(),
                            audio_path: ev.audio_path.clone(),
                        },
                    );
                }
                let s = engine.stats();
                writable &= send(
                    &writer,
                    &Message::Status {
                        frames_received: received.load(Ordering::SeqCst) as u32,
                        predictions: s.predictions as u32,
                        frames_dropped: queue.dropped() as u32,
                    },
                );
            }
            engine.stats()
        })
    };

    loop {
        match read_message(&mut reader) {
            Ok(Some(Message::Frame { values, .. })) => match LandmarkFrame::new(values) {
                Ok(frame) => {
                    received.fetch_add(1, Ordering::SeqCst);
                    queue.push(frame);
                }
                Err(e) => {
                    stats.malformed_frames += 1;
                    send(&writer, &Message::error(ErrorCode::MalformedFrame, e.to_string()));
                }
            },
            Ok(Some(other)) => {
                fatal(
                    &writer,
                    ErrorCode::ProtocolViolation,
                    format!("unexpected message type 0x{:02x} after HELLO", other.type_byte()),
                );
                break;
            }
            Ok(None) => break,
            Err(e) if e.is_malformed_frame() => {
                stats.malformed_frames += 1;
                send(&writer, &Message::error(ErrorCode::MalformedFrame, e.to_string()));
            }
            Err(ProtocolError::Io(e)) => {
                tracing::debug!(error = %e, "read failed");
                break;
            }
            Err(e) => {
                fatal(&writer, ErrorCode::ProtocolViolation, e.to_string());
                break;
            }
        }
    }

    queue.close();
    let engine_stats = worker.join().unwrap_or_default();
    stats.frames_received = received.load(Ordering::SeqCst);
    stats.frames_dropped = queue.dropped();
    stats.predictions = engine_stats.predictions;
    stats.events = engine_stats.events;
    send(
        &writer,
        &Message::Status {
            frames_received: stats.frames_received as u32,
            predictions: stats.predictions as u32,
            frames_dropped: stats.frames_dropped as u32,
        },
    );
    let _ = writer.lock().expect("writer lock").shutdown(Shutdown::Write);
    stats
}

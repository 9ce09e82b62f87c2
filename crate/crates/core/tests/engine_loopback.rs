use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use mlagru::dataset::{ClassTable, FEATURE_DIM};
use mlagru::engine::protocol::{read_message, Message, PROTOCOL_VERSION};
use mlagru::engine::{serve_connection, ServeConfig, SessionStats};
use mlagru::model::{Architecture, GestureClassifier, Variant};

fn start() -> (TcpStream, thread::JoinHandle<SessionStats>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let model = Arc::new(
        GestureClassifier::<f32>::new(
            Architecture::standard(Variant::MlaGru),
            ClassTable::default().names().to_vec(),
            3,
        )
        .unwrap(),
    );
    let classes = Arc::new(ClassTable::default());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let config = ServeConfig {
            threshold: 0.0,
            ..ServeConfig::default()
        };
        serve_connection(stream, model, classes, config)
    });
    (TcpStream::connect(addr).unwrap(), handle)
}

fn drain(stream: &TcpStream) -> Vec<Message> {
    let mut r = BufReader::new(stream.try_clone().unwrap());
    let mut out = Vec::new();
    while let Ok(Some(m)) = read_message(&mut r) {
        out.push(m);
    }
    out
}

fn frame(ts: u64) -> Message {
    Message::Frame {
        timestamp_us: ts,
        values: vec![0.25; FEATURE_DIM],
    }
}

fn error_codes(msgs: &[Message]) -> Vec<u16> {
    msgs.iter()
        .filter_map(|m| match m {
            Message::Error { code, .. } => Some(*code),
            _ => None,
        })
        .collect()
}

#[test]
fn version_mismatch_closes_with_code_1() {
    let (mut s, h) = start();
    Message::Hello {
        version: PROTOCOL_VERSION + 1,
        feature_dim: FEATURE_DIM as u32,
        timesteps: 30,
    }
    .write_to(&mut s)
    .unwrap();
    let msgs = drain(&s);
    assert_eq!(error_codes(&msgs), vec![1]);
    assert!(!msgs.iter().any(|m| matches!(m, Message::HelloAck { .. })));
    h.join().unwrap();
}

#[test]
fn dimension_mismatch_closes_with_code_2() {
    let (mut s, h) = start();
    Message::Hello {
        version: PROTOCOL_VERSION,
        feature_dim: 1000,
        timesteps: 30,
    }
    .write_to(&mut s)
    .unwrap();
    assert_eq!(error_codes(&drain(&s)), vec![2]);
    h.join().unwrap();
}

#[test]
fn malformed_frame_is_skipped_with_code_3() {
    let (mut s, h) = start();
    Message::hello().write_to(&mut s).unwrap();
    Message::Frame {
        timestamp_us: 0,
        values: vec![0.0; 10],
    }
    .write_to(&mut s)
    .unwrap();
    let mut nan = vec![0.1; FEATURE_DIM];
    nan[7] = f32::NAN;
    Message::Frame {
        timestamp_us: 1,
        values: nan,
    }
    .write_to(&mut s)
    .unwrap();
    for i in 0..30 {
        frame(i).write_to(&mut s).unwrap();
    }
    s.flush().unwrap();
    s.shutdown(Shutdown::Write).unwrap();
    let msgs = drain(&s);
    assert!(matches!(msgs[0], Message::HelloAck { ref class_names } if class_names.len() == 21));
    assert_eq!(error_codes(&msgs), vec![3, 3]);
    let events = msgs.iter().filter(|m| matches!(m, Message::Event { .. })).count();
    assert_eq!(events, 1);
    assert!(matches!(
        msgs.last(),
        Some(Message::Status {
            frames_received: 30,
            predictions: 1,
            frames_dropped: 0
        })
    ));
    let stats = h.join().unwrap();
    assert_eq!(stats.malformed_frames, 2);
    assert_eq!(stats.frames_received, 30);
}

#[test]
fn frame_before_hello_is_a_violation() {
    let (mut s, h) = start();
    frame(0).write_to(&mut s).unwrap();
    assert_eq!(error_codes(&drain(&s)), vec![4]);
    h.join().unwrap();
}

#[test]
fn unknown_type_after_hello_is_a_violation() {
    let (mut s, h) = start();
    Message::hello().write_to(&mut s).unwrap();
    s.write_all(&[0, 0, 0, 0, 0x42]).unwrap();
    let msgs = drain(&s);
    assert!(matches!(msgs[0], Message::HelloAck { .. }));
    assert_eq!(error_codes(&msgs), vec![4]);
    h.join().unwrap();
}

#[test]
fn oversized_length_is_a_violation() {
    let (mut s, h) = start();
    Message::hello().write_to(&mut s).unwrap();
    s.write_all(&[0xff, 0xff, 0xff, 0x7f, 0x01]).unwrap();
    assert_eq!(error_codes(&drain(&s)), vec![4]);
    h.join().unwrap();
}

//! Protocol client against small shell-script adapters.

use std::time::{Duration, Instant};

use drise::detector::SessionOptions;
use drise::{explain, BBox, Detector, DetectorHandle, Error, ExplainRequest, ImageTensor, MaskSpec, ProtocolError, TargetDetection};

const HANDSHAKE: &str =
    r#"{"type":"handshake","protocol_version":1,"class_names":["a","b"],"has_objectness":false,"adapter_info":{"model":"sh"}}"#;

/// `sh -c` running `body` after printing the handshake.
fn adapter(body: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), format!("echo '{HANDSHAKE}'; {body}")]
}

/// Answers request `i` with `reply` where `$i` is the running request id.
fn replying(reply: &str) -> Vec<String> {
    adapter(&format!("i=0; while IFS= read -r line; do echo \"{reply}\"; i=$((i+1)); done"))
}

fn quick() -> SessionOptions {
    SessionOptions { handshake_timeout: Duration::from_secs(10), request_timeout: Duration::from_secs(10) }
}

fn img() -> ImageTensor {
    ImageTensor::filled(8, 8, [1, 2, 3]).unwrap()
}

fn protocol(e: Error) -> ProtocolError {
    match e {
        Error::Protocol(p) => p,
        other => panic!("expected a protocol error, got {other:?}"),
    }
}

#[test]
fn handshake_and_round_trip() {
    let argv =
        replying(r#"{\"type\":\"detections\",\"id\":$i,\"detections\":[{\"bbox\":[1,2,3,4],\"objectness\":1,\"scores\":[0.25,0.5]}]}"#);
    let mut h = DetectorHandle::spawn(&argv, quick()).unwrap();
    assert_eq!(h.handshake().class_names, ["a", "b"]);
    assert!(!h.handshake().has_objectness);
    assert_eq!(h.class_count(), 2);
    for _ in 0..3 {
        let d = h.infer(&img()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(1.0, 2.0, 3.0, 4.0).unwrap());
        assert_eq!(d[0].scores, [0.25, 0.5]);
    }
    assert!(!h.is_dead());
}

#[test]
fn malformed_handshake_names_the_line() {
    let argv = vec!["sh".into(), "-c".into(), "echo 'hello adapter'; sleep 1".into()];
    match DetectorHandle::spawn(&argv, quick()) {
        Err(ProtocolError::Malformed { line, .. }) => assert_eq!(line, "hello adapter"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn version_mismatch_is_rejected() {
    let hs = HANDSHAKE.replace("\"protocol_version\":1", "\"protocol_version\":2");
    let argv = vec!["sh".into(), "-c".into(), format!("echo '{hs}'; sleep 1")];
    assert!(matches!(DetectorHandle::spawn(&argv, quick()), Err(ProtocolError::VersionMismatch { expected: 1, got: 2 })));
}

#[test]
fn empty_class_list_is_rejected() {
    let hs = HANDSHAKE.replace("[\"a\",\"b\"]", "[]");
    let argv = vec!["sh".into(), "-c".into(), format!("echo '{hs}'; sleep 1")];
    assert!(DetectorHandle::spawn(&argv, quick()).is_err());
}

#[test]
fn handshake_timeout() {
    let argv = vec!["sh".into(), "-c".into(), "sleep 5".into()];
    let opts = SessionOptions { handshake_timeout: Duration::from_millis(200), ..quick() };
    let start = Instant::now();
    assert!(matches!(DetectorHandle::spawn(&argv, opts), Err(ProtocolError::HandshakeTimeout(_))));
    assert!(start.elapsed() < Duration::from_secs(4), "drop must kill the child");
}

#[test]
fn spawn_failure() {
    let argv = vec!["/nonexistent/detector-binary".to_string()];
    assert!(matches!(DetectorHandle::spawn(&argv, quick()), Err(ProtocolError::Spawn { .. })));
    assert!(matches!(DetectorHandle::spawn(&[], quick()), Err(ProtocolError::Spawn { .. })));
}

#[test]
fn request_timeout_kills_the_session() {
    let opts = SessionOptions { request_timeout: Duration::from_millis(200), ..quick() };
    let mut h = DetectorHandle::spawn(&adapter("sleep 10"), opts).unwrap();
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::Timeout { id: 0, .. }));
    assert!(h.is_dead());
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::SessionDead(_)));
}

#[test]
fn id_mismatch() {
    let mut h = DetectorHandle::spawn(&replying(r#"{\"type\":\"detections\",\"id\":99,\"detections\":[]}"#), quick()).unwrap();
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::IdMismatch { expected: 0, got: 99 }));
    assert!(h.is_dead());
}

#[test]
fn score_length_mismatch() {
    let argv = replying(r#"{\"type\":\"detections\",\"id\":$i,\"detections\":[{\"bbox\":[1,2,3,4],\"objectness\":1,\"scores\":[1]}]}"#);
    let mut h = DetectorHandle::spawn(&argv, quick()).unwrap();
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::ScoreLength { expected: 2, got: 1 }));
}

#[test]
fn malformed_response_marks_session_dead() {
    let mut h = DetectorHandle::spawn(&replying("garbage"), quick()).unwrap();
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::Malformed { .. }));
    assert!(h.is_dead());
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::SessionDead(_)));
}

#[test]
fn adapter_errors_keep_the_session() {
    // fails on request 0, answers afterwards
    let body = r#"i=0; while IFS= read -r line; do
        if [ $i -eq 0 ]; then echo "{\"type\":\"error\",\"id\":0,\"message\":\"boom\"}";
        else echo "{\"type\":\"detections\",\"id\":$i,\"detections\":[]}"; fi; i=$((i+1)); done"#;
    let mut h = DetectorHandle::spawn(&adapter(body), quick()).unwrap();
    match protocol(h.infer(&img()).unwrap_err()) {
        ProtocolError::Remote { id: Some(0), message } => assert_eq!(message, "boom"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!h.is_dead());
    assert!(h.infer(&img()).unwrap().is_empty());
}

#[test]
fn child_exit_is_reported() {
    let mut h = DetectorHandle::spawn(&adapter("exit 0"), quick()).unwrap();
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::ChildExited(_)));
    assert!(h.is_dead());
}

#[test]
fn overlong_line_is_rejected() {
    let body = "read -r line; head -c 70000000 /dev/zero | tr '\\0' 'a'; echo; sleep 1";
    let mut h = DetectorHandle::spawn(&adapter(body), quick()).unwrap();
    assert!(matches!(protocol(h.infer(&img()).unwrap_err()), ProtocolError::LineTooLong(_)));
}

#[test]
fn engine_over_a_process_pool() {
    let reply = r#"{\"type\":\"detections\",\"id\":$i,\"detections\":[{\"bbox\":[4,4,12,12],\"objectness\":1,\"scores\":[0.6,0.0]}]}"#;
    let mut pool = DetectorHandle::spawn_pool(&replying(reply), 3, quick()).unwrap();
    let target = TargetDetection::new(BBox::new(4.0, 4.0, 12.0, 12.0).unwrap(), 0, 2).unwrap();
    let image = ImageTensor::filled(32, 32, [50, 50, 50]).unwrap();
    let mut req = ExplainRequest::new(image, vec![target], MaskSpec::new(8, 8, 0.5, 60, 1).unwrap());
    req.parallelism = 3;
    req.batch_size = 4;
    let res = explain(&req, &mut pool).unwrap();
    // objectness is 1 and the class vector is parallel enough for cos = 1
    assert!(res.weights[0].iter().all(|&w| (w - 1.0).abs() < 1e-12));
    let v = res.maps[0].raster().values();
    assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-6));
}

#[test]
fn engine_reports_protocol_failure() {
    let mut pool = vec![DetectorHandle::spawn(&replying("garbage"), quick()).unwrap()];
    let target = TargetDetection::new(BBox::new(0.0, 0.0, 8.0, 8.0).unwrap(), 0, 2).unwrap();
    let req = ExplainRequest::new(ImageTensor::filled(32, 32, [0, 0, 0]).unwrap(), vec![target], MaskSpec::new(8, 8, 0.5, 10, 0).unwrap());
    let err = explain(&req, &mut pool).unwrap_err();
    assert!(err.is_protocol());
    assert!(matches!(err, Error::Aborted { completed: 0, total: 10, .. }));
}

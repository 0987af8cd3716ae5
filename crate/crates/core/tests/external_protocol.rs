use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use regionshap::dataset::{Dataset, Sample};
use regionshap::evaluators::{EvalError, ExternalEvaluator, ExternalOptions, GameEvaluator, MeanEcho};
use regionshap::imaging::{AmplitudeImage, BaselineSpec, RegionLabelMap};
use regionshap::pipeline::{analyze_dataset_with, EvaluatorSpec, RunConfig, Shared, SpecFactory};
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Mode {
    /// Mean of the data for every class.
    Echo { batch: bool },
    /// Collects `n` score requests, then answers them in reverse order.
    Reversed(usize),
    WrongVersion,
    Silent,
    /// Replies with this many scores.
    Arity(usize),
    ErrorObject,
    UnknownId,
}

const CLASSES: usize = 10;

fn echo_scores(data: &Value) -> Vec<f64> {
    let data: Vec<f64> = data.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    vec![mean; CLASSES]
}

fn serve(stream: TcpStream, mode: Mode) {
    let mut out = stream.try_clone().unwrap();
    let mut send = |v: Value| {
        let _ = writeln!(out, "{v}");
        let _ = out.flush();
    };
    let mut held = Vec::new();
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { return };
        let req: Value = serde_json::from_str(&line).unwrap();
        let id = req["id"].clone();
        match (req["op"].as_str().unwrap(), mode) {
            ("handshake", Mode::WrongVersion) => send(json!({"id": id, "version": 2, "classes": CLASSES})),
            ("handshake", Mode::Echo { batch: true }) => {
                send(json!({"id": id, "version": 1, "classes": CLASSES, "capabilities": ["score_batch"]}))
            }
            ("handshake", _) => send(json!({"id": id, "version": 1, "classes": CLASSES})),
            (_, Mode::Silent) => {}
            (_, Mode::Arity(k)) => send(json!({"id": id, "scores": vec![0.5; k]})),
            (_, Mode::ErrorObject) => send(json!({"id": id, "error": "model exploded"})),
            (_, Mode::UnknownId) => send(json!({"id": 999, "scores": vec![0.0; CLASSES]})),
            ("score", Mode::Reversed(n)) => {
                held.push((id, echo_scores(&req["data"])));
                if held.len() == n {
                    for (id, s) in held.drain(..).rev() {
                        send(json!({"id": id, "scores": s}));
                    }
                }
            }
            ("score", _) => send(json!({"id": id, "scores": echo_scores(&req["data"])})),
            ("score_batch", _) => {
                let scores: Vec<Vec<f64>> = req["images"].as_array().unwrap().iter().map(echo_scores).collect();
                send(json!({"id": id, "scores": scores}));
            }
            (op, _) => send(json!({"id": id, "error": format!("unknown op {op}")})),
        }
    }
}

/// Listens on an ephemeral port and serves every connection in `mode`.
fn adapter(mode: Mode) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            thread::spawn(move || serve(stream, mode));
        }
    });
    addr
}

fn opts(ms: u64) -> ExternalOptions {
    ExternalOptions { timeout: Duration::from_millis(ms), ..Default::default() }
}

fn fixture() -> (AmplitudeImage, RegionLabelMap) {
    let labels = RegionLabelMap::from_raw(2, 4, &[0, 0, 1, 1, 2, 0, 1, 0]).unwrap();
    let image = AmplitudeImage::new(2, 4, vec![0.1, 0.2, 0.9, 0.8, 0.05, 0.15, 0.7, 0.3]).unwrap();
    (image, labels)
}

#[test]
fn handshake_reports_classes_and_capabilities() {
    let e = ExternalEvaluator::connect_tcp(adapter(Mode::Echo { batch: true }), opts(5000)).unwrap();
    assert_eq!(e.class_count(), CLASSES);
    assert_eq!(e.protocol_version(), 1);
    assert!(e.supports_batch());
    let plain = ExternalEvaluator::connect_tcp(adapter(Mode::Echo { batch: false }), opts(5000)).unwrap();
    assert!(!plain.supports_batch());
}

#[test]
fn echo_scores_equal_image_mean() {
    let (image, labels) = fixture();
    let e = ExternalEvaluator::connect_tcp(adapter(Mode::Echo { batch: false }), opts(5000)).unwrap();
    let s = e.scores(&image, &labels).unwrap();
    assert_eq!(s, vec![image.mean(); CLASSES]);
}

#[test]
fn out_of_order_replies_are_matched_by_id() {
    let (image, labels) = fixture();
    let inputs: Vec<AmplitudeImage> = (0..8)
        .map(|k| AmplitudeImage::new(2, 4, image.data().iter().map(|v| v * (k + 1) as f64).collect()).unwrap())
        .collect();
    let e = ExternalEvaluator::connect_tcp(adapter(Mode::Reversed(8)), opts(5000)).unwrap();
    let got = e.scores_batch(&inputs, &labels, 0).unwrap();
    for (x, s) in inputs.iter().zip(got) {
        assert_eq!(s[0], x.mean());
    }
}

#[test]
fn newer_protocol_version_is_refused() {
    let err = ExternalEvaluator::connect_tcp(adapter(Mode::WrongVersion), opts(5000)).unwrap_err();
    assert!(matches!(err, EvalError::VersionMismatch { expected: 1, got: 2 }), "{err}");
}

#[test]
fn silent_adapter_times_out() {
    let (image, labels) = fixture();
    let e = ExternalEvaluator::connect_tcp(adapter(Mode::Silent), opts(200)).unwrap();
    let err = e.scores(&image, &labels).unwrap_err();
    assert!(matches!(err, EvalError::Timeout(_)), "{err}");
}

#[test]
fn wrong_score_count_is_an_arity_error() {
    let (image, labels) = fixture();
    let e = ExternalEvaluator::connect_tcp(adapter(Mode::Arity(9)), opts(5000)).unwrap();
    let err = e.scores(&image, &labels).unwrap_err();
    assert!(matches!(err, EvalError::Arity { expected: 10, got: 9 }), "{err}");
}

#[test]
fn error_object_surfaces_as_remote_error() {
    let (image, labels) = fixture();
    let e = ExternalEvaluator::connect_tcp(adapter(Mode::ErrorObject), opts(5000)).unwrap();
    match e.scores(&image, &labels).unwrap_err() {
        EvalError::Remote(msg) => assert!(msg.contains("exploded")),
        other => panic!("{other}"),
    }
}

#[test]
fn reply_to_unknown_id_is_rejected() {
    let (image, labels) = fixture();
    let e = ExternalEvaluator::connect_tcp(adapter(Mode::UnknownId), opts(5000)).unwrap();
    assert!(matches!(e.scores(&image, &labels).unwrap_err(), EvalError::IdMismatch { got: 999 }));
}

#[test]
fn pipeline_over_adapter_matches_builtin_echo() {
    let (image, labels) = fixture();
    let samples = (0..6)
        .map(|k| Sample {
            id: format!("c{}/s{k}", k % 2),
            class_index: k % 2,
            image: AmplitudeImage::new(2, 4, image.data().iter().map(|v| v + 0.01 * k as f64).collect()).unwrap(),
            labels: labels.clone(),
        })
        .collect();
    let data = Dataset::new(vec!["c0".into(), "c1".into()], samples);
    let config = RunConfig { replicates: 2, seed: 3, parallelism: 3, baseline: BaselineSpec::default(), ..Default::default() };
    let builtin = analyze_dataset_with(&config, &data, &Shared(Arc::new(MeanEcho { classes: CLASSES }))).unwrap();
    for batch in [true, false] {
        let factory = SpecFactory { spec: EvaluatorSpec::Tcp { addr: adapter(Mode::Echo { batch }) }, timeout: Duration::from_secs(5) };
        let remote = analyze_dataset_with(&config, &data, &factory).unwrap();
        assert_eq!(serde_json::to_string(&remote.samples).unwrap(), serde_json::to_string(&builtin.samples).unwrap());
        assert_eq!(remote.overall, builtin.overall);
        assert_eq!(remote.per_class, builtin.per_class);
    }
}

#[test]
fn unreachable_adapter_is_fatal_for_the_run() {
    let (image, labels) = fixture();
    let data = Dataset::new(vec!["a".into()], vec![Sample { id: "a/x".into(), class_index: 0, image, labels }]);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let factory = SpecFactory { spec: EvaluatorSpec::Tcp { addr }, timeout: Duration::from_secs(1) };
    assert!(analyze_dataset_with(&RunConfig::default(), &data, &factory).is_err());
}

#[test]
fn adapter_that_exits_before_handshake_is_closed() {
    let err = ExternalEvaluator::spawn(&["true".to_string()], opts(5000)).unwrap_err();
    assert!(matches!(err, EvalError::Closed | EvalError::Io(_)), "{err}");
}

#[test]
fn missing_adapter_program_fails_to_spawn() {
    let err = ExternalEvaluator::spawn(&["/nonexistent/adapter".to_string()], opts(5000)).unwrap_err();
    assert!(matches!(err, EvalError::Io(_)), "{err}");
    assert!(ExternalEvaluator::spawn(&[], opts(5000)).is_err());
}

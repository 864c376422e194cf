use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, OnceLock};
use std::thread;

use iis_core::classifier::{ActionClassifier, ForestParams};
use iis_core::forecaster::{Forecaster, TrainConfig};
use iis_core::frames::{ActionLabel, Recording};
use iis_core::pipeline::{run_recording, Alignment, Models};
use iis_core::serve::{
    codes, features_message, frame_message, log_line_from_message, serve_listener, serve_stream,
    start_message, PayloadFormat, END_MESSAGE,
};
use iis_core::synthgen::Generator;
use iis_core::workflow::{fit_classifier, fit_forecaster, ClassifierSpec};
use ndarray::{Array2, ArrayView2};
use serde_json::Value;

struct Fixture {
    models: Models,
    live: Vec<Recording>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let recordings = Generator::default().recordings(16, 99);
        let (train, live) = recordings.split_at(10);
        let config = TrainConfig {
            epochs: 2,
            hidden: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let forecaster = fit_forecaster(train, 5, &config).unwrap();
        let spec = ClassifierSpec::Forest(ForestParams {
            n_estimators: 6,
            seed: 1,
            ..ForestParams::default()
        });
        let classifier = fit_classifier(train, &spec).unwrap();
        Fixture {
            models: Models::new(Arc::new(forecaster), Arc::new(classifier)).unwrap(),
            live: live.to_vec(),
        }
    })
}

fn spawn_server(models: Models) -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || serve_listener(listener, models));
    addr
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: std::net::SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        Client {
            reader: BufReader::new(stream.try_clone().unwrap()),
            writer: stream,
        }
    }

    fn send(&mut self, line: &str) {
        writeln!(self.writer, "{line}").unwrap();
    }

    fn recv(&mut self) -> String {
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        line.trim_end().to_string()
    }

    fn call(&mut self, line: &str) -> String {
        self.send(line);
        self.recv()
    }
}

fn code_of(reply: &str) -> String {
    let v: Value = serde_json::from_str(reply).unwrap();
    assert_eq!(v["type"], "error", "{reply}");
    v["code"].as_str().unwrap().to_string()
}

#[test]
fn concurrent_sessions_each_match_their_offline_log() {
    let fx = fixture();
    let addr = spawn_server(fx.models.clone());
    let handles: Vec<_> = fx
        .live
        .iter()
        .cloned()
        .map(|recording| {
            let models = fx.models.clone();
            thread::spawn(move || {
                let offline = run_recording(&models, &recording, Alignment::Current)
                    .unwrap()
                    .decisions;
                let mut client = Client::connect(addr);
                client.send(&start_message(&recording.session_id, PayloadFormat::Frame));
                for (frame, expected) in recording.frames.iter().zip(&offline) {
                    let reply = client.call(&frame_message(frame));
                    assert_eq!(
                        log_line_from_message(&reply),
                        Some(expected.log_line()),
                        "{}",
                        recording.session_id
                    );
                    thread::yield_now();
                }
                let ended: Value = serde_json::from_str(&client.call(END_MESSAGE)).unwrap();
                assert_eq!(ended["type"], "ended");
                assert_eq!(ended["session"], recording.session_id.as_str());
                assert_eq!(ended["frames"].as_u64(), Some(recording.len() as u64));
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn sessions_on_one_connection_are_independent() {
    let fx = fixture();
    let addr = spawn_server(fx.models.clone());
    let mut client = Client::connect(addr);
    for recording in fx.live.iter().take(2) {
        let offline = run_recording(&fx.models, recording, Alignment::Current)
            .unwrap()
            .decisions;
        client.send(&start_message(&recording.session_id, PayloadFormat::Frame));
        for (frame, expected) in recording.frames.iter().zip(&offline) {
            assert_eq!(
                log_line_from_message(&client.call(&frame_message(frame))),
                Some(expected.log_line())
            );
        }
        assert!(client.call(END_MESSAGE).contains("\"ended\""));
    }
}

#[test]
fn features_payload_matches_raw_frames() {
    let fx = fixture();
    let recording = &fx.live[0];
    let features = recording.feature_matrix(0.5).unwrap();
    let mut raw = String::new();
    let mut pre = String::new();
    raw.push_str(&start_message("s", PayloadFormat::Frame));
    pre.push_str(&start_message("s", PayloadFormat::Features));
    for (frame, row) in recording.frames.iter().zip(features.rows()) {
        raw.push('\n');
        raw.push_str(&frame_message(frame));
        pre.push('\n');
        pre.push_str(&features_message(
            frame.frame_index,
            row.as_slice().unwrap(),
        ));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    serve_stream(&fx.models, raw.as_bytes(), &mut a).unwrap();
    let stats = serve_stream(&fx.models, pre.as_bytes(), &mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(stats.decisions, recording.len());
    assert_eq!(stats.errors, 0);
}

#[test]
fn protocol_errors_are_reported_and_the_session_survives() {
    let fx = fixture();
    let addr = spawn_server(fx.models.clone());
    let mut client = Client::connect(addr);
    let frames = &fx.live[1].frames;

    assert_eq!(code_of(&client.call("not json")), codes::BAD_JSON);
    assert_eq!(
        code_of(&client.call(r#"{"kind":"frame"}"#)),
        codes::BAD_JSON
    );
    assert_eq!(
        code_of(&client.call(r#"{"type":"hello"}"#)),
        codes::UNKNOWN_TYPE
    );
    assert_eq!(
        code_of(&client.call(&frame_message(&frames[0]))),
        codes::NO_SESSION
    );
    assert_eq!(code_of(&client.call(END_MESSAGE)), codes::NO_SESSION);

    client.send(&start_message("errs", PayloadFormat::Frame));
    let mut short = frames[0].clone();
    short.face.pop();
    assert_eq!(
        code_of(&client.call(&frame_message(&short))),
        codes::BAD_DIM
    );
    assert_eq!(
        code_of(&client.call(&features_message(0, &[0.5; 7]))),
        codes::BAD_DIM
    );
    assert_eq!(
        code_of(&client.call(&frame_message(&frames[3]))),
        codes::OUT_OF_ORDER
    );
    let mut bad = frames[0].clone();
    bad.blendshapes[4] = 3.0;
    assert_eq!(
        code_of(&client.call(&frame_message(&bad))),
        codes::BAD_FRAME
    );

    let first = client.call(&frame_message(&frames[0]));
    assert!(first.starts_with(r#"{"type":"decision","i":0,"#), "{first}");
    assert_eq!(
        code_of(&client.call(&frame_message(&frames[0]))),
        codes::OUT_OF_ORDER
    );
    let second = client.call(&frame_message(&frames[1]));
    assert!(
        second.starts_with(r#"{"type":"decision","i":1,"#),
        "{second}"
    );
}

struct Narrow;

impl Forecaster for Narrow {
    fn dim(&self) -> usize {
        4
    }
    fn input_len(&self) -> usize {
        10
    }
    fn forecast(&self, _: ArrayView2<'_, f64>) -> iis_core::Result<Array2<f64>> {
        Ok(Array2::zeros((5, 4)))
    }
}

impl ActionClassifier for Narrow {
    fn dim(&self) -> usize {
        4
    }
    fn classify(&self, _: &[f64]) -> iis_core::Result<ActionLabel> {
        Ok(ActionLabel::Wait)
    }
}

#[test]
fn raw_frames_against_narrow_models_is_fatal_but_features_work() {
    let models = Models::new(Arc::new(Narrow), Arc::new(Narrow)).unwrap();
    let input = [
        start_message("n", PayloadFormat::Frame),
        features_message(0, &[0.1; 4]),
        start_message("n", PayloadFormat::Features),
        features_message(0, &[0.1; 4]),
        END_MESSAGE.to_string(),
    ]
    .join("\n");
    let mut out = Vec::new();
    let stats = serve_stream(&models, input.as_bytes(), &mut out).unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
    assert_eq!(code_of(lines[0]), codes::DIM_MISMATCH);
    assert_eq!(code_of(lines[1]), codes::NO_SESSION);
    assert_eq!(
        lines[2],
        r#"{"type":"decision","i":0,"action":"wait","mode":"warmup","dispatch":"discard"}"#
    );
    assert!(lines[3].contains("\"ended\""));
    assert_eq!((stats.sessions, stats.decisions, stats.errors), (1, 1, 2));
}

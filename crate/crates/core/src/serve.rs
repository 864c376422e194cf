//! Streaming inference over newline-delimited JSON.
//!
//! Client messages:
//! `{"type":"start","session":"s1","format":"frame"|"features"}`,
//! `{"type":"frame","i":0,"t":0,"body":[..],"face":[..],"hands":[..],"bs":[..]}` or
//! `{"type":"frame","i":0,"features":[..]}`, and `{"type":"end"}`.
//!
//! Server messages: one `decision` per accepted frame, `error` replies with a
//! `code`, and `ended` after `end`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::frames::{Frame, Landmark, FEATURE_LEN};
use crate::pipeline::{Decision, Models, PipelineState};

/// Per-frame soft deadline at 10 fps.
pub const FRAME_BUDGET: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadFormat {
    Frame,
    Features,
}

/// Error codes sent to clients.
pub mod codes {
    pub const BAD_JSON: &str = "bad_json";
    pub const UNKNOWN_TYPE: &str = "unknown_type";
    pub const NO_SESSION: &str = "no_session";
    pub const BAD_DIM: &str = "bad_dim";
    pub const BAD_FRAME: &str = "bad_frame";
    pub const OUT_OF_ORDER: &str = "out_of_order";
    /// Session-fatal: the models cannot consume this session's payloads.
    pub const DIM_MISMATCH: &str = "dim_mismatch";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Deserialize)]
struct StartMsg {
    session: String,
    #[serde(default = "default_format")]
    format: PayloadFormat,
}

fn default_format() -> PayloadFormat {
    PayloadFormat::Frame
}

#[derive(Debug, Deserialize)]
struct FrameMsg {
    i: u64,
    #[serde(default)]
    t: Option<i64>,
    #[serde(default)]
    body: Option<Vec<[f64; 4]>>,
    #[serde(default)]
    face: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    hands: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    bs: Option<Vec<f64>>,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

/// `{"type":"decision",...}` carrying exactly the fields of a decision-log line.
pub fn decision_message(d: &Decision) -> String {
    let line = d.log_line();
    format!("{{\"type\":\"decision\",{}", &line[1..])
}

/// Recovers the decision-log line from a `decision` message.
pub fn log_line_from_message(msg: &str) -> Option<String> {
    msg.strip_prefix("{\"type\":\"decision\",")
        .map(|rest| format!("{{{rest}"))
}

/// Client side: opens a session.
pub fn start_message(session: &str, format: PayloadFormat) -> String {
    serde_json::json!({"type": "start", "session": session, "format": format}).to_string()
}

/// Client side: a raw frame in the recording-file field layout.
pub fn frame_message(frame: &Frame) -> String {
    let record = crate::frames::FrameRecord::from_frame(frame, None);
    serde_json::json!({
        "type": "frame",
        "i": record.i,
        "t": record.t,
        "body": record.body,
        "face": record.face,
        "hands": record.hands,
        "bs": record.bs,
    })
    .to_string()
}

/// Client side: a precomputed feature vector.
pub fn features_message(i: u64, features: &[f64]) -> String {
    serde_json::json!({"type": "frame", "i": i, "features": features}).to_string()
}

pub const END_MESSAGE: &str = r#"{"type":"end"}"#;

pub fn error_message(code: &str, message: &str) -> String {
    serde_json::json!({"type": "error", "code": code, "message": message}).to_string()
}

/// What happened on one connection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    pub sessions: usize,
    pub decisions: usize,
    pub errors: usize,
    pub max_latency: Duration,
    pub over_budget: usize,
}

struct Session {
    state: PipelineState,
    format: PayloadFormat,
}

enum Reply {
    Line(String),
    Error(&'static str, String),
    Fatal(&'static str, String),
    None,
}

fn frame_from_msg(
    session: &str,
    msg: FrameMsg,
) -> std::result::Result<Frame, (&'static str, String)> {
    let (Some(body), Some(face), Some(hands), Some(bs)) = (msg.body, msg.face, msg.hands, msg.bs)
    else {
        return Err((
            codes::BAD_DIM,
            "raw frames need body, face, hands and bs".into(),
        ));
    };
    let frame = Frame {
        session_id: session.to_string(),
        frame_index: msg.i,
        timestamp_ms: msg
            .t
            .unwrap_or(msg.i as i64 * crate::frames::FRAME_INTERVAL_MS),
        body: body
            .into_iter()
            .map(|p| Landmark::new(p[0], p[1], p[2], p[3]))
            .collect(),
        face: face
            .into_iter()
            .map(|p| Landmark::point(p[0], p[1], p[2]))
            .collect(),
        hands: hands
            .into_iter()
            .map(|p| Landmark::point(p[0], p[1], p[2]))
            .collect(),
        blendshapes: bs,
    };
    match frame.validate() {
        Ok(()) => Ok(frame),
        Err(e @ Error::Schema { .. }) => Err((codes::BAD_DIM, e.to_string())),
        Err(e) => Err((codes::BAD_FRAME, e.to_string())),
    }
}

fn step_error(e: Error) -> Reply {
    match e {
        Error::OutOfOrder { .. } => Reply::Error(codes::OUT_OF_ORDER, e.to_string()),
        Error::Dimension { .. } | Error::Schema { .. } => {
            Reply::Error(codes::BAD_DIM, e.to_string())
        }
        Error::Invariant { .. } | Error::InvalidValue(_) => {
            Reply::Error(codes::BAD_FRAME, e.to_string())
        }
        other => Reply::Fatal(codes::INTERNAL, other.to_string()),
    }
}

fn handle_frame(session: &mut Session, msg: FrameMsg) -> Reply {
    let result = if let Some(features) = msg.features {
        if session.format == PayloadFormat::Frame && features.len() != FEATURE_LEN {
            return Reply::Error(
                codes::BAD_DIM,
                format!("expected {FEATURE_LEN} features, got {}", features.len()),
            );
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Reply::Error(codes::BAD_FRAME, "non-finite feature".into());
        }
        session.state.step_features(msg.i, features)
    } else {
        if session.format == PayloadFormat::Features {
            return Reply::Error(
                codes::BAD_DIM,
                "features session expects a features array".into(),
            );
        }
        match frame_from_msg(session.state.session_id(), msg) {
            Ok(frame) => session.state.step_frame(&frame),
            Err((code, m)) => return Reply::Error(code, m),
        }
    };
    match result {
        Ok(d) => Reply::Line(decision_message(&d)),
        Err(e) => step_error(e),
    }
}

/// Serves one connection: reads messages until EOF, answering in order.
pub fn serve_stream<R: BufRead, W: Write>(
    models: &Models,
    reader: R,
    mut writer: W,
) -> Result<StreamStats> {
    let mut stats = StreamStats::default();
    let mut session: Option<Session> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let received = Instant::now();
        let reply = match serde_json::from_str::<Value>(&line) {
            Err(e) => Reply::Error(codes::BAD_JSON, e.to_string()),
            Ok(value) => match value.get("type").and_then(Value::as_str) {
                None => Reply::Error(codes::BAD_JSON, "missing \"type\"".into()),
                Some("start") => match serde_json::from_value::<StartMsg>(value) {
                    Err(e) => Reply::Error(codes::BAD_JSON, e.to_string()),
                    Ok(start) => {
                        if start.format == PayloadFormat::Frame && models.dim() != FEATURE_LEN {
                            Reply::Fatal(
                                codes::DIM_MISMATCH,
                                format!(
                                    "models expect {} features, raw frames give {FEATURE_LEN}",
                                    models.dim()
                                ),
                            )
                        } else {
                            log::info!("session {} started ({:?})", start.session, start.format);
                            stats.sessions += 1;
                            session = Some(Session {
                                state: PipelineState::new(start.session, models.clone()),
                                format: start.format,
                            });
                            Reply::None
                        }
                    }
                },
                Some("frame") => match session.as_mut() {
                    None => Reply::Error(codes::NO_SESSION, "send start first".into()),
                    Some(s) => match serde_json::from_value::<FrameMsg>(value) {
                        Err(e) => Reply::Error(codes::BAD_JSON, e.to_string()),
                        Ok(msg) => handle_frame(s, msg),
                    },
                },
                Some("end") => match session.take() {
                    None => Reply::Error(codes::NO_SESSION, "no session to end".into()),
                    Some(s) => {
                        log::info!(
                            "session {} ended after {} frames",
                            s.state.session_id(),
                            s.state.frames_seen()
                        );
                        Reply::Line(
                            serde_json::json!({
                                "type": "ended",
                                "session": s.state.session_id(),
                                "frames": s.state.frames_seen(),
                            })
                            .to_string(),
                        )
                    }
                },
                Some(other) => Reply::Error(
                    codes::UNKNOWN_TYPE,
                    format!("unknown message type {other:?}"),
                ),
            },
        };
        match reply {
            Reply::Line(out) => {
                writeln!(writer, "{out}")?;
                writer.flush()?;
                if out.starts_with("{\"type\":\"decision\"") {
                    stats.decisions += 1;
                    let latency = received.elapsed();
                    stats.max_latency = stats.max_latency.max(latency);
                    if latency > FRAME_BUDGET {
                        stats.over_budget += 1;
                        log::warn!("decision took {latency:?}, over the {FRAME_BUDGET:?} budget");
                    } else {
                        log::debug!("decision latency {latency:?}");
                    }
                }
            }
            Reply::Error(code, message) => {
                stats.errors += 1;
                writeln!(writer, "{}", error_message(code, &message))?;
                writer.flush()?;
            }
            Reply::Fatal(code, message) => {
                stats.errors += 1;
                session = None;
                writeln!(writer, "{}", error_message(code, &message))?;
                writer.flush()?;
            }
            Reply::None => {}
        }
    }
    Ok(stats)
}

/// Serves one TCP connection.
pub fn serve_connection(models: &Models, stream: TcpStream) -> Result<StreamStats> {
    let peer = stream.peer_addr().ok();
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let stats = serve_stream(models, reader, BufWriter::new(stream))?;
    log::info!(
        "connection {peer:?} closed: {} decisions, max latency {:?}, {} over budget",
        stats.decisions,
        stats.max_latency,
        stats.over_budget
    );
    Ok(stats)
}

/// Accepts connections forever, one thread per connection.
pub fn serve_listener(listener: TcpListener, models: Models) -> Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let models = models.clone();
        thread::spawn(move || {
            if let Err(e) = serve_connection(&models, stream) {
                log::warn!("connection failed: {e}");
            }
        });
    }
    Ok(())
}

pub fn serve_tcp(addr: impl ToSocketAddrs, models: Models) -> Result<()> {
    serve_listener(TcpListener::bind(addr)?, models)
}

//! The timing classifier: per-frame warm-up classification, then
//! forecast-and-classify once ten frames of history exist.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classifier::ActionClassifier;
use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::frames::{featurize_into, ActionLabel, Frame, Recording, DEFAULT_VISIBILITY_THRESHOLD};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::windows::{INPUT_LEN, OUTPUT_LEN};

/// Frames classified directly before the forecaster has a full history.
pub const WARMUP_LEN: usize = INPUT_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Warmup,
    Forecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    Discard,
    ToTypeClassifier,
}

/// What the type classifier is asked to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Handoff {
    /// Robot opens the conversation.
    Greet,
    /// Robot switches to listening.
    EnterListen,
}

/// One per-frame output. Serializes to a decision-log record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub i: u64,
    pub action: ActionLabel,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<ActionLabel>>,
    pub dispatch: Dispatch,
    #[serde(skip)]
    pub handoff: Option<Handoff>,
}

impl Decision {
    /// One line of the decision log, without the trailing newline.
    pub fn log_line(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }
}

/// Majority label; ties resolve to listen, then speak, then wait.
pub fn aggregate_votes(votes: &[ActionLabel]) -> Option<ActionLabel> {
    let mut counts = [0usize; ActionLabel::COUNT];
    for v in votes {
        counts[v.index()] += 1;
    }
    let max = *counts.iter().max()?;
    if max == 0 {
        return None;
    }
    ActionLabel::ALL
        .into_iter()
        .find(|l| counts[l.index()] == max)
}

/// Routes a decision: wait is dropped, speak and listen go to the type classifier.
pub fn dispatch(mut decision: Decision) -> Decision {
    let (d, h) = match decision.action {
        ActionLabel::Wait => (Dispatch::Discard, None),
        ActionLabel::Speak => (Dispatch::ToTypeClassifier, Some(Handoff::Greet)),
        ActionLabel::Listen => (Dispatch::ToTypeClassifier, Some(Handoff::EnterListen)),
    };
    decision.dispatch = d;
    decision.handoff = h;
    decision
}

/// Receiver of dispatched decisions.
pub trait TypeClassifierHook: Send + Sync {
    fn handoff(&self, session_id: &str, frame_index: u64, request: Handoff);
}

/// Stand-in type classifier that only records what it was handed.
#[derive(Debug, Default)]
pub struct RecordingStub {
    calls: Mutex<Vec<(String, u64, Handoff)>>,
}

impl RecordingStub {
    pub fn calls(&self) -> Vec<(String, u64, Handoff)> {
        self.calls.lock().expect("stub lock").clone()
    }
}

impl TypeClassifierHook for RecordingStub {
    fn handoff(&self, session_id: &str, frame_index: u64, request: Handoff) {
        self.calls
            .lock()
            .expect("stub lock")
            .push((session_id.to_string(), frame_index, request));
    }
}

/// Shared read-only models for any number of sessions.
#[derive(Clone)]
pub struct Models {
    pub forecaster: Arc<dyn Forecaster>,
    pub classifier: Arc<dyn ActionClassifier>,
    pub hook: Option<Arc<dyn TypeClassifierHook>>,
    pub visibility_threshold: f64,
}

impl Models {
    pub fn new(
        forecaster: Arc<dyn Forecaster>,
        classifier: Arc<dyn ActionClassifier>,
    ) -> Result<Self> {
        if forecaster.dim() != classifier.dim() {
            return Err(Error::Dimension {
                expected: forecaster.dim(),
                found: classifier.dim(),
            });
        }
        if forecaster.input_len() != INPUT_LEN {
            return Err(Error::Config(format!(
                "forecaster reads {} frames, the pipeline buffers {INPUT_LEN}",
                forecaster.input_len()
            )));
        }
        Ok(Models {
            forecaster,
            classifier,
            hook: None,
            visibility_threshold: DEFAULT_VISIBILITY_THRESHOLD,
        })
    }

    pub fn with_hook(mut self, hook: Arc<dyn TypeClassifierHook>) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn dim(&self) -> usize {
        self.forecaster.dim()
    }
}

/// Per-session state: the last ten real feature rows and the frame counter.
pub struct PipelineState {
    session_id: String,
    models: Models,
    buffer: VecDeque<Vec<f64>>,
    counter: u64,
}

impl PipelineState {
    pub fn new(session_id: impl Into<String>, models: Models) -> Self {
        PipelineState {
            session_id: session_id.into(),
            models,
            buffer: VecDeque::with_capacity(INPUT_LEN),
            counter: 0,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn frames_seen(&self) -> u64 {
        self.counter
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn dim(&self) -> usize {
        self.models.dim()
    }

    fn expect_index(&self, i: u64) -> Result<()> {
        if i != self.counter {
            return Err(Error::OutOfOrder {
                expected: self.counter,
                got: i,
            });
        }
        Ok(())
    }

    /// Featurizes a raw frame and advances the session by one step.
    pub fn step_frame(&mut self, frame: &Frame) -> Result<Decision> {
        self.expect_index(frame.frame_index)?;
        let mut x = vec![0.0; self.dim()];
        featurize_into(frame, self.models.visibility_threshold, &mut x)?;
        self.step_features(frame.frame_index, x)
    }

    /// Advances the session with an already featurized frame.
    ///
    /// From frame 10 on, the buffered frames `t-10..t-1` are forecast to
    /// `t..t+4` before frame `t` itself enters the buffer.
    pub fn step_features(&mut self, frame_index: u64, x: Vec<f64>) -> Result<Decision> {
        self.expect_index(frame_index)?;
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let decision = if self.buffer.len() < INPUT_LEN {
            Decision {
                i: frame_index,
                action: self.models.classifier.classify(&x)?,
                mode: Mode::Warmup,
                votes: None,
                dispatch: Dispatch::Discard,
                handoff: None,
            }
        } else {
            let history =
                Array2::from_shape_fn((INPUT_LEN, self.dim()), |(r, c)| self.buffer[r][c]);
            let forecast = self.models.forecaster.forecast(history.view())?;
            let votes = self.models.classifier.classify_rows(forecast.view())?;
            Decision {
                i: frame_index,
                action: aggregate_votes(&votes).ok_or(Error::Empty("forecast votes"))?,
                mode: Mode::Forecast,
                votes: Some(votes),
                dispatch: Dispatch::Discard,
                handoff: None,
            }
        };
        if self.buffer.len() == INPUT_LEN {
            self.buffer.pop_front();
        }
        self.buffer.push_back(x);
        self.counter += 1;

        let decision = dispatch(decision);
        if let (Some(hook), Some(h)) = (&self.models.hook, decision.handoff) {
            hook.handoff(&self.session_id, decision.i, h);
        }
        Ok(decision)
    }
}

/// Which label a decision at frame `t` is scored against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// The label of frame `t`.
    #[default]
    Current,
    /// Forecast decisions against the label of frame `t + 5`; warm-up
    /// decisions against frame `t`. Decisions whose target lies past the
    /// end are not scored.
    ForecastTarget,
}

impl std::str::FromStr for Alignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Alignment::Current),
            "forecast-target" => Ok(Alignment::ForecastTarget),
            other => Err(Error::Config(format!("unknown alignment {other:?}"))),
        }
    }
}

/// Predicted and true labels under `alignment`.
pub fn aligned_pairs(
    decisions: &[Decision],
    labels: &[ActionLabel],
    alignment: Alignment,
) -> (Vec<ActionLabel>, Vec<ActionLabel>) {
    let mut pred = Vec::with_capacity(decisions.len());
    let mut truth = Vec::with_capacity(decisions.len());
    for d in decisions {
        let t = d.i as usize;
        let target = match (alignment, d.mode) {
            (Alignment::ForecastTarget, Mode::Forecast) => t + OUTPUT_LEN,
            _ => t,
        };
        if let Some(&l) = labels.get(target) {
            pred.push(d.action);
            truth.push(l);
        }
    }
    (pred, truth)
}

#[derive(Debug, Clone)]
pub struct RecordingRun {
    pub decisions: Vec<Decision>,
    /// Present when the recording is labeled.
    pub confusion: Option<ConfusionMatrix>,
}

/// Runs every frame of a recording through a fresh session.
pub fn run_recording(
    models: &Models,
    recording: &Recording,
    alignment: Alignment,
) -> Result<RecordingRun> {
    let mut state = PipelineState::new(recording.session_id.clone(), models.clone());
    let decisions = recording
        .frames
        .iter()
        .map(|f| state.step_frame(f))
        .collect::<Result<Vec<_>>>()?;
    let confusion = match &recording.labels {
        Some(labels) if !decisions.is_empty() => {
            let (pred, truth) = aligned_pairs(&decisions, labels, alignment);
            Some(if pred.is_empty() {
                ConfusionMatrix::default()
            } else {
                confusion(&pred, &truth)?
            })
        }
        _ => None,
    };
    Ok(RecordingRun {
        decisions,
        confusion,
    })
}

/// Pooled confusion over labeled recordings, with every decision sequence.
pub fn evaluate_recordings(
    models: &Models,
    recordings: &[Recording],
    alignment: Alignment,
) -> Result<(ConfusionMatrix, Vec<Vec<Decision>>)> {
    use rayon::prelude::*;
    let runs = recordings
        .par_iter()
        .map(|r| run_recording(models, r, alignment))
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionMatrix::default();
    let mut all = Vec::with_capacity(runs.len());
    for run in runs {
        if let Some(cm) = &run.confusion {
            total.merge(cm);
        }
        all.push(run.decisions);
    }
    Ok((total, all))
}

/// Writes a decision log, one record per line.
pub fn write_decision_log<W: Write>(mut w: W, decisions: &[Decision]) -> Result<()> {
    for d in decisions {
        writeln!(w, "{}", d.log_line())?;
    }
    Ok(())
}

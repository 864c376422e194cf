//! Landmark frames, action labels, recordings and the per-frame feature layout.
//!
//! A [`Frame`] carries 543 landmarks (33 body, 468 face, 2×21 hand) and 53
//! blendshape scores. [`featurize`] flattens it into a fixed 1682-value
//! [`FeatureVector`]:
//!
//! ```text
//! [   0 ..   98]  body  x,y,z  (33×3, visibility-gated)
//! [  99 .. 1502]  face  x,y,z  (468×3)
//! [1503 .. 1628]  hands x,y,z  (42×3, left then right)
//! [1629 .. 1681]  blendshape scores (53, slot 0 = neutral)
//! ```

mod dataset;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{read_dataset, write_dataset, Dataset, Manifest, SessionEntry, Split};
pub use io::{
    merge_labels, read_label_sidecar, read_recordings, write_recordings, FrameRecord, LabelRecord,
};

pub const BODY_LANDMARKS: usize = 33;
pub const FACE_LANDMARKS: usize = 468;
pub const HAND_LANDMARKS: usize = 21;
pub const HANDS_LANDMARKS: usize = 2 * HAND_LANDMARKS;
pub const BLENDSHAPES: usize = 53;
pub const TOTAL_LANDMARKS: usize = BODY_LANDMARKS + FACE_LANDMARKS + HANDS_LANDMARKS;

pub const BODY_OFFSET: usize = 0;
pub const FACE_OFFSET: usize = BODY_OFFSET + 3 * BODY_LANDMARKS;
pub const HANDS_OFFSET: usize = FACE_OFFSET + 3 * FACE_LANDMARKS;
pub const BLENDSHAPE_OFFSET: usize = HANDS_OFFSET + 3 * HANDS_LANDMARKS;
/// Length of every canonical feature vector.
pub const FEATURE_LEN: usize = BLENDSHAPE_OFFSET + BLENDSHAPES;
/// Length of the facial coordinate block.
pub const FACE_BLOCK_LEN: usize = 3 * FACE_LANDMARKS;

pub const DEFAULT_VISIBILITY_THRESHOLD: f64 = 0.5;
/// Nominal spacing between frames at 10 fps.
pub const FRAME_INTERVAL_MS: i64 = 100;

/// A tracked keypoint. `visibility` is only meaningful for body points.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub visibility: f64,
}

impl Landmark {
    pub const ZERO: Landmark = Landmark {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        visibility: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64, visibility: f64) -> Self {
        Landmark {
            x,
            y,
            z,
            visibility,
        }
    }

    pub fn point(x: f64, y: f64, z: f64) -> Self {
        Landmark::new(x, y, z, 0.0)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.x) || !unit(self.y) {
            return Err(format!(
                "coordinates ({}, {}) outside [0,1]",
                self.x, self.y
            ));
        }
        if !self.z.is_finite() {
            return Err("non-finite depth".into());
        }
        if !unit(self.visibility) {
            return Err(format!("visibility {} outside [0,1]", self.visibility));
        }
        Ok(())
    }
}

/// The robot action appropriate for a frame.
///
/// Variant order is the canonical class order used everywhere (confusion
/// matrix rows/columns, tie-breaks): listen, speak, wait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionLabel {
    Listen,
    Speak,
    Wait,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 3] = [ActionLabel::Listen, ActionLabel::Speak, ActionLabel::Wait];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionLabel::Listen => "listen",
            ActionLabel::Speak => "speak",
            ActionLabel::Wait => "wait",
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "listen" => Ok(ActionLabel::Listen),
            "speak" => Ok(ActionLabel::Speak),
            "wait" => Ok(ActionLabel::Wait),
            other => Err(Error::InvalidValue(format!(
                "unknown action label {other:?}"
            ))),
        }
    }
}

/// One 10 fps snapshot of a single person.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub session_id: String,
    pub frame_index: u64,
    pub timestamp_ms: i64,
    pub body: Vec<Landmark>,
    pub face: Vec<Landmark>,
    /// Left hand then right hand; an absent hand is 21 zero landmarks.
    pub hands: Vec<Landmark>,
    pub blendshapes: Vec<f64>,
}

impl Frame {
    /// An all-zero frame with correct cardinalities.
    pub fn zeroed(session_id: impl Into<String>, frame_index: u64) -> Self {
        Frame {
            session_id: session_id.into(),
            frame_index,
            timestamp_ms: frame_index as i64 * FRAME_INTERVAL_MS,
            body: vec![Landmark::ZERO; BODY_LANDMARKS],
            face: vec![Landmark::ZERO; FACE_LANDMARKS],
            hands: vec![Landmark::ZERO; HANDS_LANDMARKS],
            blendshapes: vec![0.0; BLENDSHAPES],
        }
    }

    /// Checks block cardinalities only.
    pub fn check_schema(&self) -> Result<()> {
        let blocks = [
            ("body", BODY_LANDMARKS, self.body.len()),
            ("face", FACE_LANDMARKS, self.face.len()),
            ("hands", HANDS_LANDMARKS, self.hands.len()),
            ("blendshapes", BLENDSHAPES, self.blendshapes.len()),
        ];
        for (block, expected, found) in blocks {
            if expected != found {
                return Err(Error::Schema {
                    block,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    /// Checks cardinalities and value ranges.
    pub fn validate(&self) -> Result<()> {
        self.check_schema()?;
        let invariant = |message: String| Error::Invariant {
            session_id: self.session_id.clone(),
            frame_index: self.frame_index,
            message,
        };
        let blocks = [
            ("body", &self.body),
            ("face", &self.face),
            ("hands", &self.hands),
        ];
        for (name, points) in blocks {
            for (k, lm) in points.iter().enumerate() {
                lm.check()
                    .map_err(|m| invariant(format!("{name}[{k}]: {m}")))?;
            }
        }
        for (k, &s) in self.blendshapes.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) {
                return Err(invariant(format!("blendshape[{k}] = {s} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// The canonical 1682-value per-frame representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_LEN {
            return Err(Error::Dimension {
                expected: FEATURE_LEN,
                found: values.len(),
            });
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn body(&self) -> &[f64] {
        &self.0[BODY_OFFSET..FACE_OFFSET]
    }

    pub fn face(&self) -> &[f64] {
        &self.0[FACE_OFFSET..HANDS_OFFSET]
    }

    pub fn hands(&self) -> &[f64] {
        &self.0[HANDS_OFFSET..BLENDSHAPE_OFFSET]
    }

    pub fn blendshapes(&self) -> &[f64] {
        &self.0[BLENDSHAPE_OFFSET..]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// What a position in the canonical layout holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    X,
    Y,
    Z,
    Blendshape,
}

/// Kind of the entry at `index` in the canonical layout.
pub fn feature_kind(index: usize) -> FeatureKind {
    assert!(index < FEATURE_LEN, "feature index {index} out of range");
    if index >= BLENDSHAPE_OFFSET {
        return FeatureKind::Blendshape;
    }
    match index % 3 {
        0 => FeatureKind::X,
        1 => FeatureKind::Y,
        _ => FeatureKind::Z,
    }
}

/// Flattens a frame into the canonical layout.
///
/// Body landmarks whose visibility is below `visibility_threshold` contribute
/// `(0, 0, 0)`. Visibility itself is never emitted.
pub fn featurize(frame: &Frame, visibility_threshold: f64) -> Result<FeatureVector> {
    let mut out = vec![0.0; FEATURE_LEN];
    featurize_into(frame, visibility_threshold, &mut out)?;
    Ok(FeatureVector(out))
}

/// Like [`featurize`] but writes into a caller-provided row of length 1682.
pub fn featurize_into(frame: &Frame, visibility_threshold: f64, out: &mut [f64]) -> Result<()> {
    if !(0.0..=1.0).contains(&visibility_threshold) {
        return Err(Error::InvalidValue(format!(
            "visibility threshold {visibility_threshold} outside [0,1]"
        )));
    }
    frame.check_schema()?;
    if out.len() != FEATURE_LEN {
        return Err(Error::Dimension {
            expected: FEATURE_LEN,
            found: out.len(),
        });
    }
    for (k, lm) in frame.body.iter().enumerate() {
        let dst = &mut out[BODY_OFFSET + 3 * k..BODY_OFFSET + 3 * k + 3];
        if lm.visibility < visibility_threshold {
            dst.fill(0.0);
        } else {
            dst.copy_from_slice(&[lm.x, lm.y, lm.z]);
        }
    }
    for (k, lm) in frame.face.iter().enumerate() {
        out[FACE_OFFSET + 3 * k..FACE_OFFSET + 3 * k + 3].copy_from_slice(&[lm.x, lm.y, lm.z]);
    }
    for (k, lm) in frame.hands.iter().enumerate() {
        out[HANDS_OFFSET + 3 * k..HANDS_OFFSET + 3 * k + 3].copy_from_slice(&[lm.x, lm.y, lm.z]);
    }
    out[BLENDSHAPE_OFFSET..].copy_from_slice(&frame.blendshapes);
    Ok(())
}

/// An ordered, optionally labeled frame sequence for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub session_id: String,
    pub frames: Vec<Frame>,
    pub labels: Option<Vec<ActionLabel>>,
    pub metadata: BTreeMap<String, String>,
}

impl Recording {
    pub fn new(
        session_id: impl Into<String>,
        frames: Vec<Frame>,
        labels: Option<Vec<ActionLabel>>,
    ) -> Self {
        Recording {
            session_id: session_id.into(),
            frames,
            labels,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (pos, frame) in self.frames.iter().enumerate() {
            if frame.session_id != self.session_id {
                return Err(Error::Invariant {
                    session_id: self.session_id.clone(),
                    frame_index: frame.frame_index,
                    message: format!("frame belongs to session {:?}", frame.session_id),
                });
            }
            if frame.frame_index != pos as u64 {
                return Err(Error::Invariant {
                    session_id: self.session_id.clone(),
                    frame_index: frame.frame_index,
                    message: format!("frame index should be {pos} (indices must step by 1 from 0)"),
                });
            }
            frame.validate()?;
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.frames.len() {
                return Err(Error::Invariant {
                    session_id: self.session_id.clone(),
                    frame_index: labels.len().min(self.frames.len()) as u64,
                    message: format!("{} labels for {} frames", labels.len(), self.frames.len()),
                });
            }
        }
        Ok(())
    }

    /// Featurizes every frame into an N×1682 matrix.
    pub fn feature_matrix(&self, visibility_threshold: f64) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((self.frames.len(), FEATURE_LEN));
        for (frame, mut row) in self.frames.iter().zip(m.rows_mut()) {
            let row = row.as_slice_mut().expect("standard layout");
            featurize_into(frame, visibility_threshold, row)?;
        }
        Ok(m)
    }

    /// Frame counts per class in [`ActionLabel`] order; zeros when unlabeled.
    pub fn label_counts(&self) -> [usize; ActionLabel::COUNT] {
        let mut counts = [0; ActionLabel::COUNT];
        for label in self.labels.iter().flatten() {
            counts[label.index()] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets() {
        assert_eq!(TOTAL_LANDMARKS, 543);
        assert_eq!(FACE_OFFSET, 99);
        assert_eq!(HANDS_OFFSET, 1503);
        assert_eq!(BLENDSHAPE_OFFSET, 1629);
        assert_eq!(FEATURE_LEN, 1682);
        assert_eq!(FACE_BLOCK_LEN, 1404);
    }

    #[test]
    fn low_visibility_body_point_is_zeroed() {
        let mut frame = Frame::zeroed("s", 0);
        frame.body[5] = Landmark::new(0.3, 0.7, -0.1, 0.4);
        let v = featurize(&frame, DEFAULT_VISIBILITY_THRESHOLD).unwrap();
        assert_eq!(&v.as_slice()[15..18], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_frame_gives_zero_vector() {
        let v = featurize(&Frame::zeroed("s", 0), 0.5).unwrap();
        assert_eq!(v.as_slice().len(), FEATURE_LEN);
        assert!(v.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn malformed_block_is_named() {
        let mut frame = Frame::zeroed("s", 0);
        frame.face.pop();
        match featurize(&frame, 0.5) {
            Err(Error::Schema {
                block,
                expected,
                found,
            }) => {
                assert_eq!(block, "face");
                assert_eq!((expected, found), (468, 467));
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut frame = Frame::zeroed("s", 0);
        frame.blendshapes.push(0.0);
        assert!(matches!(
            featurize(&frame, 0.5),
            Err(Error::Schema {
                block: "blendshapes",
                ..
            })
        ));
    }

    #[test]
    fn threshold_out_of_range_rejected() {
        assert!(featurize(&Frame::zeroed("s", 0), 1.5).is_err());
    }

    #[test]
    fn label_strings() {
        for label in ActionLabel::ALL {
            assert_eq!(label.as_str().parse::<ActionLabel>().unwrap(), label);
        }
        assert!("greet".parse::<ActionLabel>().is_err());
        assert_eq!(
            serde_json::to_string(&ActionLabel::Speak).unwrap(),
            "\"speak\""
        );
    }

    #[test]
    fn feature_kinds() {
        assert_eq!(feature_kind(0), FeatureKind::X);
        assert_eq!(feature_kind(100), FeatureKind::Y);
        assert_eq!(feature_kind(1502), FeatureKind::Z);
        assert_eq!(feature_kind(1629), FeatureKind::Blendshape);
    }

    #[test]
    fn recording_index_gap_detected() {
        let frames = vec![Frame::zeroed("r", 0), Frame::zeroed("r", 2)];
        let err = Recording::new("r", frames, None).validate().unwrap_err();
        assert!(matches!(err, Error::Invariant { frame_index: 2, .. }));
    }
}

//! Newline-delimited recording files (`*.rec.jsonl`), one frame per line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ActionLabel, Frame, Landmark, Recording};
use crate::error::{Error, PathContext, Result};

pub const RECORDING_SUFFIX: &str = ".rec.jsonl";

/// On-disk form of one frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub session: String,
    pub i: u64,
    pub t: i64,
    pub body: Vec<[f64; 4]>,
    pub face: Vec<[f64; 3]>,
    pub hands: Vec<[f64; 3]>,
    pub bs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ActionLabel>,
    /// Session metadata, carried on the first line of a session only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl FrameRecord {
    pub fn from_frame(frame: &Frame, label: Option<ActionLabel>) -> Self {
        FrameRecord {
            session: frame.session_id.clone(),
            i: frame.frame_index,
            t: frame.timestamp_ms,
            body: frame
                .body
                .iter()
                .map(|l| [l.x, l.y, l.z, l.visibility])
                .collect(),
            face: frame.face.iter().map(|l| [l.x, l.y, l.z]).collect(),
            hands: frame.hands.iter().map(|l| [l.x, l.y, l.z]).collect(),
            bs: frame.blendshapes.clone(),
            label,
            meta: None,
        }
    }

    /// Converts to a [`Frame`], checking block cardinalities.
    pub fn into_frame(self) -> Result<(Frame, Option<ActionLabel>)> {
        let point = |p: [f64; 3]| Landmark::point(p[0], p[1], p[2]);
        let frame = Frame {
            session_id: self.session,
            frame_index: self.i,
            timestamp_ms: self.t,
            body: self
                .body
                .into_iter()
                .map(|p| Landmark::new(p[0], p[1], p[2], p[3]))
                .collect(),
            face: self.face.into_iter().map(point).collect(),
            hands: self.hands.into_iter().map(point).collect(),
            blendshapes: self.bs,
        };
        frame.check_schema()?;
        Ok((frame, self.label))
    }
}

fn recording_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(RECORDING_SUFFIX))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads recordings from a `*.rec.jsonl` file, or from every such file in a
/// directory (sorted by file name). Consecutive lines sharing a session id
/// form one recording. Every recording is validated.
pub fn read_recordings(path: impl AsRef<Path>) -> Result<Vec<Recording>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut all = Vec::new();
        for file in recording_files(path)? {
            all.extend(read_file(&file)?);
        }
        Ok(all)
    } else {
        read_file(path)
    }
}

struct Pending {
    session_id: String,
    frames: Vec<Frame>,
    labels: Vec<Option<ActionLabel>>,
    metadata: BTreeMap<String, String>,
}

impl Pending {
    fn finish(self) -> Result<Recording> {
        let labeled = self.labels.iter().filter(|l| l.is_some()).count();
        let labels = if labeled == 0 {
            None
        } else if labeled == self.labels.len() {
            Some(self.labels.into_iter().flatten().collect())
        } else {
            let missing = self.labels.iter().position(|l| l.is_none()).unwrap_or(0);
            return Err(Error::Invariant {
                session_id: self.session_id,
                frame_index: missing as u64,
                message: "labels must be present on every frame or on none".into(),
            });
        };
        let recording = Recording {
            session_id: self.session_id,
            frames: self.frames,
            labels,
            metadata: self.metadata,
        };
        recording.validate()?;
        Ok(recording)
    }
}

fn read_file(path: &Path) -> Result<Vec<Recording>> {
    let reader = BufReader::new(File::open(path).at(path)?);
    let mut out = Vec::new();
    let mut current: Option<Pending> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let record: FrameRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let meta = record.meta.clone();
        let (frame, label) = record.into_frame().map_err(|e| parse_err(e.to_string()))?;
        let same = current
            .as_ref()
            .is_some_and(|p| p.session_id == frame.session_id);
        if !same {
            if let Some(done) = current.take() {
                out.push(done.finish()?);
            }
            current = Some(Pending {
                session_id: frame.session_id.clone(),
                frames: Vec::new(),
                labels: Vec::new(),
                metadata: BTreeMap::new(),
            });
        }
        let pending = current.as_mut().expect("session started");
        if let Some(meta) = meta {
            pending.metadata.extend(meta);
        }
        pending.frames.push(frame);
        pending.labels.push(label);
    }
    if let Some(done) = current.take() {
        out.push(done.finish()?);
    }
    Ok(out)
}

/// Writes recordings to a single file, one frame per line.
pub fn write_recordings(recordings: &[Recording], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).at(path)?);
    for recording in recordings {
        write_recording_to(recording, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_recording_to<W: Write>(recording: &Recording, w: &mut W) -> Result<()> {
    recording.validate()?;
    for (k, frame) in recording.frames.iter().enumerate() {
        let label = recording.labels.as_ref().map(|l| l[k]);
        let mut record = FrameRecord::from_frame(frame, label);
        if k == 0 && !recording.metadata.is_empty() {
            record.meta = Some(recording.metadata.clone());
        }
        serde_json::to_writer(&mut *w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One line of a label sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub session: String,
    pub i: u64,
    pub label: ActionLabel,
}

/// Reads a newline-delimited label sidecar (`{"session","i","label"}` per line).
pub fn read_label_sidecar(path: impl AsRef<Path>) -> Result<BTreeMap<(String, u64), ActionLabel>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).at(path)?);
    let mut labels = BTreeMap::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        if labels
            .insert((rec.session.clone(), rec.i), rec.label)
            .is_some()
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!(
                    "duplicate label for session {} frame {}",
                    rec.session, rec.i
                ),
            });
        }
    }
    Ok(labels)
}

/// Attaches sidecar labels to recordings. A session must be labeled on every
/// frame or not at all; labels naming unknown frames are rejected.
pub fn merge_labels(
    recordings: Vec<Recording>,
    labels: &BTreeMap<(String, u64), ActionLabel>,
) -> Result<Vec<Recording>> {
    let mut used = 0;
    let mut out = Vec::with_capacity(recordings.len());
    for mut r in recordings {
        let found: Vec<Option<ActionLabel>> = r
            .frames
            .iter()
            .map(|f| labels.get(&(r.session_id.clone(), f.frame_index)).copied())
            .collect();
        let n = found.iter().filter(|l| l.is_some()).count();
        if n == found.len() && n > 0 {
            r.labels = Some(found.into_iter().flatten().collect());
        } else if n > 0 {
            let missing = found.iter().position(|l| l.is_none()).unwrap_or(0);
            return Err(Error::Invariant {
                session_id: r.session_id,
                frame_index: r.frames[missing].frame_index,
                message: "sidecar labels must cover every frame of a session".into(),
            });
        }
        used += n;
        out.push(r);
    }
    if used != labels.len() {
        let known: std::collections::BTreeSet<(String, u64)> = out
            .iter()
            .flat_map(|r| {
                r.frames
                    .iter()
                    .map(|f| (r.session_id.clone(), f.frame_index))
            })
            .collect();
        let (session, i) = labels
            .keys()
            .find(|k| !known.contains(*k))
            .expect("an unused label exists");
        return Err(Error::Invariant {
            session_id: session.clone(),
            frame_index: *i,
            message: "label refers to a frame that is not in the recordings".into(),
        });
    }
    Ok(out)
}

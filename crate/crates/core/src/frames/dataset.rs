//! Dataset directories: one `*.rec.jsonl` file per session plus `manifest.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{read_recordings, write_recording_to, RECORDING_SUFFIX};
use super::Recording;
use crate::error::{Error, PathContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub id: String,
    pub file: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sessions: Vec<SessionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.as_ref().join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn split_of(&self, session_id: &str) -> Option<Split> {
        self.sessions
            .iter()
            .find(|s| s.id == session_id)
            .and_then(|s| s.split)
    }
}

/// A loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub recordings: Vec<Recording>,
}

impl Dataset {
    fn with_split(&self, split: Split) -> Vec<Recording> {
        self.recordings
            .iter()
            .filter(|r| self.manifest.split_of(&r.session_id) == Some(split))
            .cloned()
            .collect()
    }

    /// Recordings assigned to the train side. Errors if no split is recorded.
    pub fn train(&self) -> Result<Vec<Recording>> {
        self.require_split()?;
        Ok(self.with_split(Split::Train))
    }

    pub fn test(&self) -> Result<Vec<Recording>> {
        self.require_split()?;
        Ok(self.with_split(Split::Test))
    }

    fn require_split(&self) -> Result<()> {
        if self.manifest.sessions.iter().any(|s| s.split.is_none()) {
            return Err(Error::Split(
                "dataset has no train/test assignment; run `split` first".into(),
            ));
        }
        Ok(())
    }
}

fn file_name_for(session_id: &str) -> String {
    let safe: String = session_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}{RECORDING_SUFFIX}")
}

/// Writes a dataset directory and returns its manifest.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    recordings: &[Recording],
    generator: Option<serde_json::Value>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut sessions = Vec::with_capacity(recordings.len());
    for recording in recordings {
        let file = file_name_for(&recording.session_id);
        if sessions.iter().any(|s: &SessionEntry| s.file == file) {
            return Err(Error::Config(format!("duplicate session file {file}")));
        }
        let mut w = BufWriter::new(File::create(dir.join(&file))?);
        write_recording_to(recording, &mut w)?;
        w.flush()?;
        sessions.push(SessionEntry {
            id: recording.session_id.clone(),
            file,
            frames: recording.len(),
            split: None,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        sessions,
        generator,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Reads every session listed in the manifest, in manifest order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir)?;
    let mut recordings = Vec::with_capacity(manifest.sessions.len());
    for entry in &manifest.sessions {
        let mut recs = read_recordings(dir.join(&entry.file))?;
        if recs.len() != 1 || recs[0].session_id != entry.id {
            return Err(Error::Config(format!(
                "{} should hold exactly session {:?}",
                entry.file, entry.id
            )));
        }
        recordings.push(recs.remove(0));
    }
    Ok(Dataset {
        manifest,
        recordings,
    })
}

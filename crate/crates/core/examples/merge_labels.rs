//! Attaches labels from a sidecar file to unlabeled recordings, as produced
//! by an external landmark extractor.

use std::fs;

use iis_core::frames::{
    merge_labels, read_label_sidecar, read_recordings, write_recordings, LabelRecord,
};
use iis_core::synthgen::generate_recording;

fn main() -> iis_core::Result<()> {
    let dir = std::env::temp_dir().join("iis-merge-labels");
    fs::create_dir_all(&dir)?;

    let mut recording = generate_recording(12, None)?;
    let labels = recording.labels.take().expect("labeled");
    let rec_path = dir.join("capture.rec.jsonl");
    write_recordings(&[recording.clone()], &rec_path)?;

    let sidecar: String = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let rec = LabelRecord {
                session: recording.session_id.clone(),
                i: i as u64,
                label,
            };
            serde_json::to_string(&rec).expect("label serializes") + "\n"
        })
        .collect();
    let label_path = dir.join("capture.labels.jsonl");
    fs::write(&label_path, &sidecar)?;
    println!("sidecar line: {}", sidecar.lines().next().unwrap_or(""));

    let merged = merge_labels(
        read_recordings(&rec_path)?,
        &read_label_sidecar(&label_path)?,
    )?;
    println!(
        "{}: {} frames, labels restored {}",
        merged[0].session_id,
        merged[0].len(),
        merged[0].labels.as_deref() == Some(labels.as_slice())
    );

    // A sidecar covering only part of a recording is refused.
    let partial: String = sidecar.lines().take(5).map(|l| format!("{l}\n")).collect();
    fs::write(&label_path, partial)?;
    let err = merge_labels(
        read_recordings(&rec_path)?,
        &read_label_sidecar(&label_path)?,
    )
    .unwrap_err();
    println!("partial sidecar: {err}");
    Ok(())
}

use std::collections::BTreeMap;
use std::fs;

use iis_core::frames::{
    merge_labels, read_label_sidecar, read_recordings, write_recordings, ActionLabel, Recording,
};
use iis_core::synthgen::Generator;
use iis_core::Error;

fn unlabeled(n: usize, seed: u64) -> (Vec<Recording>, BTreeMap<(String, u64), ActionLabel>) {
    let mut recordings = Generator::default().recordings(n, seed);
    let mut labels = BTreeMap::new();
    for r in &mut recordings {
        for (f, l) in r.frames.iter().zip(r.labels.take().unwrap()) {
            labels.insert((r.session_id.clone(), f.frame_index), l);
        }
    }
    (recordings, labels)
}

#[test]
fn merge_restores_generator_labels() {
    let (recordings, labels) = unlabeled(3, 4);
    let merged = merge_labels(recordings, &labels).unwrap();
    let original = Generator::default().recordings(3, 4);
    assert_eq!(merged, original);
}

#[test]
fn sessions_without_labels_stay_unlabeled() {
    let (recordings, mut labels) = unlabeled(3, 5);
    let dropped = recordings[1].session_id.clone();
    labels.retain(|(s, _), _| *s != dropped);
    let merged = merge_labels(recordings, &labels).unwrap();
    assert!(merged[0].labels.is_some());
    assert!(merged[1].labels.is_none());
    assert!(merged[2].labels.is_some());
}

#[test]
fn partial_and_foreign_labels_are_rejected() {
    let (recordings, labels) = unlabeled(2, 6);
    let mut partial = labels.clone();
    let first = partial.keys().next().cloned().unwrap();
    partial.remove(&first);
    assert!(matches!(
        merge_labels(recordings.clone(), &partial),
        Err(Error::Invariant { .. })
    ));

    let mut foreign = labels.clone();
    foreign.insert(("elsewhere".into(), 0), ActionLabel::Wait);
    let err = merge_labels(recordings.clone(), &foreign).unwrap_err();
    assert!(err.to_string().contains("elsewhere"), "{err}");

    let mut beyond = labels;
    let session = recordings[0].session_id.clone();
    beyond.insert((session, 10_000), ActionLabel::Speak);
    assert!(merge_labels(recordings, &beyond).is_err());
}

#[test]
fn sidecar_parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.jsonl");
    fs::write(
        &path,
        "{\"session\":\"a\",\"i\":0,\"label\":\"wait\"}\n\n{\"session\":\"a\",\"i\":1,\"label\":\"shout\"}\n",
    )
    .unwrap();
    match read_label_sidecar(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    fs::write(
        &path,
        "{\"session\":\"a\",\"i\":0,\"label\":\"wait\"}\n{\"session\":\"a\",\"i\":0,\"label\":\"speak\"}\n",
    )
    .unwrap();
    assert!(read_label_sidecar(&path)
        .unwrap_err()
        .to_string()
        .contains("duplicate"));
}

#[test]
fn merged_files_round_trip_through_disk() {
    let (recordings, labels) = unlabeled(2, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.rec.jsonl");
    write_recordings(&recordings, &path).unwrap();
    let back = read_recordings(&path).unwrap();
    assert!(back.iter().all(|r| r.labels.is_none()));
    let merged = merge_labels(back, &labels).unwrap();
    let out = dir.path().join("out.rec.jsonl");
    write_recordings(&merged, &out).unwrap();
    assert_eq!(read_recordings(&out).unwrap(), merged);
}

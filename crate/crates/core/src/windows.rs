//! Dataset preparation: sliding windows for the forecaster, recording-level
//! train/test splits and balanced class weights.

use std::fmt;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frames::{ActionLabel, Recording, Split};

pub const INPUT_LEN: usize = 10;
pub const OUTPUT_LEN: usize = 5;

/// Ten consecutive feature rows and the five rows that follow them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
    pub session_id: String,
    pub start: usize,
}

fn check_window_params(in_len: usize, out_len: usize, stride: usize) -> Result<()> {
    if in_len == 0 || out_len == 0 || stride == 0 {
        return Err(Error::InvalidValue(format!(
            "window lengths and stride must be >= 1 (got {in_len}, {out_len}, {stride})"
        )));
    }
    Ok(())
}

/// Start indices of every window of `in_len + out_len` rows in an `n`-row series.
pub fn window_starts(n: usize, in_len: usize, out_len: usize, stride: usize) -> Vec<usize> {
    let span = in_len + out_len;
    if n < span {
        return Vec::new();
    }
    (0..=n - span).step_by(stride).collect()
}

/// Windows over one featurized series.
pub fn make_windows_from_matrix(
    features: &Array2<f64>,
    session_id: &str,
    in_len: usize,
    out_len: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    check_window_params(in_len, out_len, stride)?;
    Ok(window_starts(features.nrows(), in_len, out_len, stride)
        .into_iter()
        .map(|start| WindowSample {
            input: features.slice(s![start..start + in_len, ..]).to_owned(),
            target: features
                .slice(s![start + in_len..start + in_len + out_len, ..])
                .to_owned(),
            session_id: session_id.to_string(),
            start,
        })
        .collect())
}

/// Featurizes a recording and cuts it into forecaster windows.
/// Recordings shorter than `in_len + out_len` yield no windows.
pub fn make_windows(
    recording: &Recording,
    in_len: usize,
    out_len: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    check_window_params(in_len, out_len, stride)?;
    let features = recording.feature_matrix(crate::frames::DEFAULT_VISIBILITY_THRESHOLD)?;
    make_windows_from_matrix(&features, &recording.session_id, in_len, out_len, stride)
}

/// Indexed access to (input, target) window pairs.
pub trait WindowSource: Sync {
    fn len(&self) -> usize;
    fn input(&self, i: usize) -> ArrayView2<'_, f64>;
    fn target(&self, i: usize) -> ArrayView2<'_, f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl WindowSource for [WindowSample] {
    fn len(&self) -> usize {
        <[WindowSample]>::len(self)
    }
    fn input(&self, i: usize) -> ArrayView2<'_, f64> {
        self[i].input.view()
    }
    fn target(&self, i: usize) -> ArrayView2<'_, f64> {
        self[i].target.view()
    }
}

impl WindowSource for Vec<WindowSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn input(&self, i: usize) -> ArrayView2<'_, f64> {
        self[i].input.view()
    }
    fn target(&self, i: usize) -> ArrayView2<'_, f64> {
        self[i].target.view()
    }
}

/// Windows held as views into per-recording feature matrices, so
/// overlapping windows share storage.
#[derive(Debug, Clone)]
pub struct WindowSet {
    series: Vec<Array2<f64>>,
    index: Vec<(usize, usize)>,
    in_len: usize,
    out_len: usize,
}

impl WindowSet {
    pub fn from_series(
        series: Vec<Array2<f64>>,
        in_len: usize,
        out_len: usize,
        stride: usize,
    ) -> Result<Self> {
        check_window_params(in_len, out_len, stride)?;
        if let Some(first) = series.first() {
            if let Some(bad) = series.iter().find(|m| m.ncols() != first.ncols()) {
                return Err(Error::Dimension {
                    expected: first.ncols(),
                    found: bad.ncols(),
                });
            }
        }
        let index = series
            .iter()
            .enumerate()
            .flat_map(|(k, m)| {
                window_starts(m.nrows(), in_len, out_len, stride)
                    .into_iter()
                    .map(move |start| (k, start))
            })
            .collect();
        Ok(WindowSet {
            series,
            index,
            in_len,
            out_len,
        })
    }

    pub fn from_recordings(
        recordings: &[Recording],
        in_len: usize,
        out_len: usize,
        stride: usize,
    ) -> Result<Self> {
        let series = recordings
            .iter()
            .map(|r| r.feature_matrix(crate::frames::DEFAULT_VISIBILITY_THRESHOLD))
            .collect::<Result<Vec<_>>>()?;
        Self::from_series(series, in_len, out_len, stride)
    }

    pub fn dim(&self) -> Option<usize> {
        self.series.first().map(|m| m.ncols())
    }

    pub fn series(&self) -> &[Array2<f64>] {
        &self.series
    }

    /// `(series index, start row)` of window `i`.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        self.index[i]
    }
}

impl WindowSource for WindowSet {
    fn len(&self) -> usize {
        self.index.len()
    }
    fn input(&self, i: usize) -> ArrayView2<'_, f64> {
        let (k, start) = self.index[i];
        self.series[k].slice(s![start..start + self.in_len, ..])
    }
    fn target(&self, i: usize) -> ArrayView2<'_, f64> {
        let (k, start) = self.index[i];
        let from = start + self.in_len;
        self.series[k].slice(s![from..from + self.out_len, ..])
    }
}

/// A recording-level train/test partition with per-class frame tallies.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Recording>,
    pub test: Vec<Recording>,
    /// Frame counts in [`ActionLabel`] order.
    pub train_counts: [usize; ActionLabel::COUNT],
    pub test_counts: [usize; ActionLabel::COUNT],
}

fn tally(recordings: &[Recording]) -> [usize; ActionLabel::COUNT] {
    recordings
        .iter()
        .fold([0; ActionLabel::COUNT], |mut acc, r| {
            for (a, c) in acc.iter_mut().zip(r.label_counts()) {
                *a += c;
            }
            acc
        })
}

impl fmt::Display for DatasetSplit {
    /// Renders the split in the layout of a class-distribution table.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, name: &str, train: usize, test: usize| {
            let total = train + test;
            let pct = |v: usize| {
                if total == 0 {
                    0.0
                } else {
                    100.0 * v as f64 / total as f64
                }
            };
            writeln!(
                f,
                "{name:<16} {:>8} ({:>5.1}%) {:>8} ({:>5.1}%) {:>8}",
                train,
                pct(train),
                test,
                pct(test),
                total
            )
        };
        writeln!(
            f,
            "{:<16} {:>17} {:>17} {:>8}",
            "", "Train", "Test", "Total"
        )?;
        row(
            f,
            "Instances",
            self.train_counts.iter().sum(),
            self.test_counts.iter().sum(),
        )?;
        for label in [ActionLabel::Wait, ActionLabel::Listen, ActionLabel::Speak] {
            let i = label.index();
            row(
                f,
                &format!("Class \"{label}\""),
                self.train_counts[i],
                self.test_counts[i],
            )?;
        }
        writeln!(
            f,
            "Recordings       {:>8}            {:>8}",
            self.train.len(),
            self.test.len()
        )
    }
}

/// The class a recording is stratified by: its most frequent non-wait label,
/// or wait when it has none.
fn stratum(recording: &Recording) -> usize {
    let counts = recording.label_counts();
    let (listen, speak) = (
        counts[ActionLabel::Listen.index()],
        counts[ActionLabel::Speak.index()],
    );
    if listen == 0 && speak == 0 {
        ActionLabel::Wait.index()
    } else if listen >= speak {
        ActionLabel::Listen.index()
    } else {
        ActionLabel::Speak.index()
    }
}

/// Assigns each recording to train or test, stratified by recording class.
///
/// The test side receives `round(n × test_fraction)` recordings (at least one,
/// at most `n - 1`), allocated across strata by largest remainder.
pub fn split_assignment(
    recordings: &[Recording],
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<Split>> {
    let n = recordings.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 recordings, got {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let k = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);

    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); ActionLabel::COUNT];
    for (i, r) in recordings.iter().enumerate() {
        strata[stratum(r)].push(i);
    }

    let exact: Vec<f64> = strata
        .iter()
        .map(|s| k as f64 * s.len() as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = k - quota.iter().sum::<usize>();
    for &s in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[s] < strata[s].len() {
            quota[s] += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Train; n];
    for (members, q) in strata.iter_mut().zip(quota) {
        members.shuffle(&mut rng);
        for &i in members.iter().take(q) {
            assignment[i] = Split::Test;
        }
    }
    Ok(assignment)
}

/// Splits at recording granularity; deterministic for a fixed seed.
pub fn split_dataset(
    recordings: &[Recording],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let assignment = split_assignment(recordings, test_fraction, seed)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, side) in recordings.iter().zip(assignment) {
        match side {
            Split::Train => train.push(r.clone()),
            Split::Test => test.push(r.clone()),
        }
    }
    Ok(DatasetSplit {
        train_counts: tally(&train),
        test_counts: tally(&test),
        train,
        test,
    })
}

/// `weight(c) = total / (n_classes × count(c))`.
pub fn balanced_class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Empty("class counts"));
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        let name = ActionLabel::from_index(c).map_or_else(|| format!("#{c}"), |l| l.to_string());
        return Err(Error::MissingClass(name));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| total as f64 / (k * c as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Frame;

    fn ramp(n: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, dim), |(r, c)| r as f64 + c as f64 / 100.0)
    }

    fn labeled(id: &str, n: usize, tail: ActionLabel) -> Recording {
        let frames = (0..n as u64).map(|i| Frame::zeroed(id, i)).collect();
        let labels = (0..n)
            .map(|i| if i < n / 2 { ActionLabel::Wait } else { tail })
            .collect();
        Recording::new(id, frames, Some(labels))
    }

    #[test]
    fn window_counts_at_boundaries() {
        assert_eq!(
            make_windows_from_matrix(&ramp(15, 2), "s", 10, 5, 1)
                .unwrap()
                .len(),
            1
        );
        assert!(make_windows_from_matrix(&ramp(14, 2), "s", 10, 5, 1)
            .unwrap()
            .is_empty());
        assert_eq!(
            make_windows_from_matrix(&ramp(24, 2), "s", 10, 5, 1)
                .unwrap()
                .len(),
            10
        );
    }

    #[test]
    fn window_count_matches_enumeration() {
        for n in 0..40 {
            for stride in 1..4 {
                let mut brute = 0;
                let mut start = 0;
                while start + 15 <= n {
                    brute += 1;
                    start += stride;
                }
                assert_eq!(
                    window_starts(n, 10, 5, stride).len(),
                    brute,
                    "n={n} stride={stride}"
                );
            }
        }
    }

    #[test]
    fn windows_are_contiguous() {
        let m = ramp(20, 3);
        for w in make_windows_from_matrix(&m, "s", 10, 5, 1).unwrap() {
            assert_eq!(w.input.dim(), (10, 3));
            assert_eq!(w.target.dim(), (5, 3));
            assert_eq!(w.input.row(0), m.row(w.start));
            assert_eq!(w.target.row(0), m.row(w.start + 10));
        }
    }

    #[test]
    fn zero_stride_rejected() {
        assert!(make_windows_from_matrix(&ramp(20, 1), "s", 10, 5, 0).is_err());
    }

    #[test]
    fn window_set_matches_samples() {
        let series = vec![ramp(17, 2), ramp(9, 2), ramp(16, 2)];
        let set = WindowSet::from_series(series.clone(), 10, 5, 1).unwrap();
        let samples: Vec<WindowSample> = series
            .iter()
            .flat_map(|m| make_windows_from_matrix(m, "s", 10, 5, 1).unwrap())
            .collect();
        assert_eq!(set.len(), samples.len());
        for i in 0..set.len() {
            assert_eq!(set.input(i), samples[i].input.view());
            assert_eq!(set.target(i), samples[i].target.view());
        }
    }

    #[test]
    fn full_scale_split_has_22_test_recordings() {
        let recs: Vec<Recording> = (0..201)
            .map(|i| {
                let tail = if i % 5 < 3 {
                    ActionLabel::Listen
                } else {
                    ActionLabel::Speak
                };
                labeled(&format!("r{i}"), 4, tail)
            })
            .collect();
        let split = split_dataset(&recs, 0.109, 3).unwrap();
        assert_eq!(split.test.len(), 22);
        assert_eq!(split.train.len(), 179);
    }

    #[test]
    fn two_recordings_split_one_each() {
        let recs = vec![
            labeled("a", 4, ActionLabel::Speak),
            labeled("b", 4, ActionLabel::Listen),
        ];
        let split = split_dataset(&recs, 0.5, 0).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (1, 1));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let recs: Vec<Recording> = (0..30)
            .map(|i| {
                labeled(
                    &format!("r{i}"),
                    6,
                    if i % 2 == 0 {
                        ActionLabel::Listen
                    } else {
                        ActionLabel::Speak
                    },
                )
            })
            .collect();
        let a = split_assignment(&recs, 0.2, 11).unwrap();
        let b = split_assignment(&recs, 0.2, 11).unwrap();
        assert_eq!(a, b);
        let split = split_dataset(&recs, 0.2, 11).unwrap();
        assert_eq!(split.train.len() + split.test.len(), 30);
        for r in &split.test {
            assert!(!split.train.iter().any(|t| t.session_id == r.session_id));
        }
        // stratified: 3 of each kind
        let listen = split
            .test
            .iter()
            .filter(|r| r.label_counts()[0] > 0)
            .count();
        assert_eq!(listen, 3);
        assert_eq!(split.test_counts, tally(&split.test));
    }

    #[test]
    fn split_needs_two_recordings() {
        assert!(split_dataset(&[labeled("a", 2, ActionLabel::Speak)], 0.5, 0).is_err());
    }

    #[test]
    fn balanced_weights_examples() {
        let w = balanced_class_weights(&[11594, 5829, 6352]).unwrap();
        for (got, want) in w.iter().zip([0.6835, 1.3596, 1.2477]) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
        assert_eq!(balanced_class_weights(&[7, 7, 7]).unwrap(), vec![1.0; 3]);
        let w = balanced_class_weights(&[10, 10, 20]).unwrap();
        for (got, want) in w.iter().zip([4.0 / 3.0, 4.0 / 3.0, 2.0 / 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(balanced_class_weights(&[3, 0, 2]).is_err());
    }
}

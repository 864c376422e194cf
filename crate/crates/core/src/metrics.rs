//! Confusion matrices and precision/recall/F1 with macro and support-weighted
//! averaging.
//!
//! Matrices are oriented with predicted classes as rows and correct classes
//! as columns, in [`ActionLabel`] order (listen, speak, wait).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{forecast_rmse, ForecastModel};
use crate::frames::ActionLabel;
use crate::windows::WindowSource;

const N: usize = ActionLabel::COUNT;

pub const ORIENTATION: &str = "rows=predicted, columns=correct";

/// Action classifier alone on the 2900-instance test set.
pub const SVM_REFERENCE: ConfusionMatrix = ConfusionMatrix {
    counts: [[396, 285, 64], [302, 575, 26], [15, 23, 1214]],
};

/// Forecaster + action classifier (timing classifier) on the same test set.
pub const TIMING_REFERENCE: ConfusionMatrix = ConfusionMatrix {
    counts: [[318, 234, 80], [380, 634, 42], [15, 15, 1182]],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[predicted][correct]`.
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn add(&mut self, predicted: ActionLabel, correct: ActionLabel) {
        self.counts[predicted.index()][correct.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Column sums: number of samples whose correct class is each label.
    pub fn support(&self) -> [u64; N] {
        let mut s = [0; N];
        for row in &self.counts {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }

    /// Row sums: number of samples predicted as each label.
    pub fn predicted(&self) -> [u64; N] {
        let mut p = [0; N];
        for (acc, row) in p.iter_mut().zip(&self.counts) {
            *acc = row.iter().sum();
        }
        p
    }

    pub fn trace(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    /// Expands the matrix back into `(predicted, correct)` label sequences.
    pub fn replay(&self) -> (Vec<ActionLabel>, Vec<ActionLabel>) {
        let mut predicted = Vec::with_capacity(self.total() as usize);
        let mut correct = Vec::with_capacity(self.total() as usize);
        for (p, row) in self.counts.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    predicted.push(ActionLabel::ALL[p]);
                    correct.push(ActionLabel::ALL[c]);
                }
            }
        }
        (predicted, correct)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "orientation": ORIENTATION,
            "classes": ActionLabel::ALL.iter().map(|l| l.as_str()).collect::<Vec<_>>(),
            "counts": self.counts,
        })
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<18}{:>10}{:>10}{:>10}",
            "predicted \\ true", "listen", "speak", "wait"
        )?;
        for (label, row) in ActionLabel::ALL.iter().zip(&self.counts) {
            writeln!(
                f,
                "{:<18}{:>10}{:>10}{:>10}",
                label.as_str(),
                row[0],
                row[1],
                row[2]
            )?;
        }
        Ok(())
    }
}

/// Tallies predictions against correct labels.
pub fn confusion(predicted: &[ActionLabel], correct: &[ActionLabel]) -> Result<ConfusionMatrix> {
    if predicted.len() != correct.len() {
        return Err(Error::Dimension {
            expected: correct.len(),
            found: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("label sequences"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &c) in predicted.iter().zip(correct) {
        cm.add(p, c);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ActionLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total: u64,
    /// Set when some class has zero support or is never predicted; the
    /// affected per-class values are reported as 0.
    pub degenerate: bool,
}

/// Per-class `(precision, recall, f1, support)` for a square `counts[pred][true]`
/// table of any size, plus whether any ratio had a zero denominator.
pub fn class_scores(counts: &[Vec<u64>]) -> (Vec<(f64, f64, f64, u64)>, bool) {
    let n = counts.len();
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let scores = (0..n)
        .map(|k| {
            let diag = counts[k][k];
            let row: u64 = counts[k].iter().sum();
            let col: u64 = counts.iter().map(|r| r[k]).sum();
            let precision = ratio(diag, row);
            let recall = ratio(diag, col);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (precision, recall, f1, col)
        })
        .collect();
    (scores, degenerate)
}

/// Summarises a confusion matrix.
pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    let table: Vec<Vec<u64>> = cm.counts.iter().map(|r| r.to_vec()).collect();
    let (scores, degenerate) = class_scores(&table);
    let total = cm.total();
    let per_class: Vec<ClassMetrics> = scores
        .iter()
        .zip(ActionLabel::ALL)
        .map(|(&(precision, recall, f1, support), label)| ClassMetrics {
            label,
            precision,
            recall,
            f1,
            support,
        })
        .collect();
    let k = per_class.len() as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
    };
    let weighted = |get: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class
                .iter()
                .map(|c| get(c) * c.support as f64)
                .sum::<f64>()
                / total as f64
        }
    };
    let weighted_avg = Averages {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    let accuracy = if total == 0 {
        0.0
    } else {
        cm.trace() as f64 / total as f64
    };
    MetricsReport {
        per_class,
        macro_avg,
        weighted_avg,
        accuracy,
        total,
        degenerate: degenerate || total == 0,
    }
}

impl MetricsReport {
    pub fn class(&self, label: ActionLabel) -> &ClassMetrics {
        &self.per_class[label.index()]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<18}{:>11}{:>9}{:>10}{:>9}",
            "", "precision", "recall", "f1-score", "support"
        )?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<18}{:>11.4}{:>9.4}{:>10.4}{:>9}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        let pct = |v: f64| format!("{:.0}%", 100.0 * v);
        for (name, avg) in [
            ("macro average", self.macro_avg),
            ("weighted average", self.weighted_avg),
        ] {
            writeln!(
                f,
                "{:<18}{:>11}{:>9}{:>10}{:>9}",
                name,
                pct(avg.precision),
                pct(avg.recall),
                pct(avg.f1),
                self.total
            )?;
        }
        writeln!(f, "accuracy          {:.1}%", 100.0 * self.accuracy)?;
        if self.degenerate {
            writeln!(
                f,
                "(degenerate: some class has zero support or no predictions)"
            )?;
        }
        Ok(())
    }
}

/// Forecast RMSE for run summaries.
pub fn rmse_report<W: WindowSource + ?Sized>(model: &ForecastModel, windows: &W) -> Result<f64> {
    forecast_rmse(model, windows)
}

/// Combined classification and forecast summary of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub classification: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub orientation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast_rmse: Option<f64>,
    pub recordings: usize,
    pub frames: u64,
}

impl RunSummary {
    pub fn new(confusion: ConfusionMatrix, forecast_rmse: Option<f64>, recordings: usize) -> Self {
        RunSummary {
            classification: report(&confusion),
            orientation: ORIENTATION.to_string(),
            frames: confusion.total(),
            confusion,
            forecast_rmse,
            recordings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_all_wait() {
        let labels = vec![ActionLabel::Wait; 5];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm.counts, [[0, 0, 0], [0, 0, 0], [0, 0, 5]]);
    }

    #[test]
    fn single_pair_orientation() {
        let cm = confusion(&[ActionLabel::Listen], &[ActionLabel::Speak]).unwrap();
        assert_eq!(cm.counts[0][1], 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(confusion(&[ActionLabel::Wait], &[]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn timing_reference_replays_exactly() {
        let (p, c) = TIMING_REFERENCE.replay();
        assert_eq!(p.len(), 2900);
        assert_eq!(confusion(&p, &c).unwrap(), TIMING_REFERENCE);
    }

    #[test]
    fn reference_supports_match_test_split() {
        // listen 713, speak 883, wait 1304
        assert_eq!(SVM_REFERENCE.support(), [713, 883, 1304]);
        assert_eq!(TIMING_REFERENCE.support(), [713, 883, 1304]);
    }

    #[test]
    fn timing_reference_wait_scores() {
        let r = report(&TIMING_REFERENCE);
        let wait = r.class(ActionLabel::Wait);
        assert!((wait.precision - 1182.0 / 1212.0).abs() < 1e-12);
        assert!((wait.recall - 1182.0 / 1304.0).abs() < 1e-12);
        assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn zero_support_flags_degenerate() {
        let cm = confusion(
            &[ActionLabel::Wait, ActionLabel::Wait],
            &[ActionLabel::Wait, ActionLabel::Speak],
        )
        .unwrap();
        let r = report(&cm);
        assert!(r.degenerate);
        assert_eq!(r.class(ActionLabel::Listen).recall, 0.0);
        assert_eq!(r.class(ActionLabel::Listen).f1, 0.0);
    }

    #[test]
    fn json_carries_orientation() {
        let v = SVM_REFERENCE.to_json();
        assert_eq!(v["orientation"], ORIENTATION);
        assert_eq!(v["counts"][2][2], 1214);
    }

    fn arb_matrix() -> impl Strategy<Value = [[u64; 3]; 3]> {
        proptest::array::uniform3(proptest::array::uniform3(0u64..50))
            .prop_filter("all classes supported", |m| {
                (0..3).all(|c| m.iter().map(|r| r[c]).sum::<u64>() > 0)
            })
    }

    proptest! {
        #[test]
        fn permutation_equivariant(m in arb_matrix(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
            let cm = ConfusionMatrix { counts: m };
            let mut permuted = [[0u64; 3]; 3];
            for p in 0..3 {
                for c in 0..3 {
                    permuted[perm[p]][perm[c]] = m[p][c];
                }
            }
            let a = report(&cm);
            let b = report(&ConfusionMatrix { counts: permuted });
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
            prop_assert!((a.weighted_avg.precision - b.weighted_avg.precision).abs() < 1e-12);
            for k in 0..3 {
                prop_assert!((a.per_class[k].f1 - b.per_class[perm[k]].f1).abs() < 1e-12);
            }
        }

        #[test]
        fn weighted_recall_is_accuracy(m in arb_matrix()) {
            let r = report(&ConfusionMatrix { counts: m });
            prop_assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
            for c in &r.per_class {
                prop_assert!((0.0..=1.0).contains(&c.precision) && (0.0..=1.0).contains(&c.f1));
            }
        }

        #[test]
        fn macro_equals_weighted_for_equal_support(a in 0u64..20, b in 0u64..20, c in 0u64..20, d in 0u64..20) {
            // each column sums to 40
            let m = [[40 - a - b, c, 0], [a, 40 - c - d, 5], [b, d, 35]];
            let r = report(&ConfusionMatrix { counts: m });
            prop_assert!((r.macro_avg.recall - r.weighted_avg.recall).abs() < 1e-12);
            prop_assert!((r.macro_avg.f1 - r.weighted_avg.f1).abs() < 1e-12);
            prop_assert!((r.macro_avg.precision - r.weighted_avg.precision).abs() < 1e-12);
        }
    }
}

//! Stratified k-fold grid search over SVM hyperparameters.

use std::fmt::Write as _;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::kernel::KernelData;
use super::svm::{train_svm_on, ClassWeight, Gamma, SvmModel, SvmParams};
use crate::error::{Error, Result};
use crate::frames::ActionLabel;

/// C ∈ {0.1, 1, 10} × gamma ∈ {scale, 0.01, 0.001} × {balanced, uniform}.
pub fn default_grid() -> Vec<SvmParams> {
    let mut grid = Vec::new();
    for c in [0.1, 1.0, 10.0] {
        for gamma in [Gamma::Scale, Gamma::Value(0.01), Gamma::Value(0.001)] {
            for class_weight in [ClassWeight::Balanced, ClassWeight::Uniform] {
                grid.push(SvmParams {
                    c,
                    gamma,
                    class_weight,
                    ..SvmParams::default()
                });
            }
        }
    }
    grid
}

/// Fold index per row. Each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[ActionLabel], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be >= 2, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    let mut offset = 0;
    for label in ActionLabel::ALL {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::Config(format!(
                "class {label} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (k, i) in members.into_iter().enumerate() {
            assignment[i] = (k + offset) % folds;
        }
        // Continue the deal where the previous class stopped, balancing fold sizes.
        offset = (offset + y.iter().filter(|&&l| l == label).count()) % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateResult {
    pub params: SvmParams,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearchReport {
    pub folds: usize,
    pub seed: u64,
    pub candidates: Vec<CandidateResult>,
    /// Index of the winning candidate.
    pub best: usize,
    /// Best candidate refit on every row.
    pub model: SvmModel,
}

impl GridSearchReport {
    pub fn best_params(&self) -> &SvmParams {
        &self.candidates[self.best].params
    }

    /// One row per candidate: index, C, gamma, class weight, fold scores, mean, std.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("candidate,C,gamma,class_weight");
        for k in 0..self.folds {
            let _ = write!(out, ",fold_{}", k + 1);
        }
        out.push_str(",mean,std\n");
        for (i, c) in self.candidates.iter().enumerate() {
            let _ = write!(
                out,
                "{i},{},{},{}",
                c.params.c, c.params.gamma, c.params.class_weight
            );
            for s in &c.fold_scores {
                let _ = write!(out, ",{s:.6}");
            }
            let _ = writeln!(out, ",{:.6},{:.6}", c.mean, c.std);
        }
        out
    }
}

/// Highest mean score; ties go to the earliest candidate.
pub fn select_best(candidates: &[CandidateResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|b| c.mean > candidates[b].mean) {
            best = Some(i);
        }
    }
    best
}

pub fn grid_search(
    x: ArrayView2<'_, f64>,
    y: &[ActionLabel],
    grid: &[SvmParams],
    folds: usize,
    seed: u64,
) -> Result<GridSearchReport> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    for p in grid {
        p.validate()?;
    }
    let assignment = stratified_folds(y, folds, seed)?;
    let precompute = grid.iter().map(|p| p.precompute_bytes).min().unwrap_or(0);
    let data = KernelData::new(x, precompute);

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds).map(move |f| (c, f)))
        .collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == f).collect();
            let (model, _) = train_svm_on(&data, y, &train, &grid[c])?;
            let preds = model.predict_rows(x.select(Axis(0), &test).view())?;
            let hits = preds
                .iter()
                .zip(&test)
                .filter(|(p, &i)| p.label == y[i])
                .count();
            Ok(hits as f64 / test.len() as f64)
        })
        .collect();

    let mut candidates = Vec::with_capacity(grid.len());
    let mut iter = scores.into_iter();
    for params in grid {
        let fold_scores = iter.by_ref().take(folds).collect::<Result<Vec<f64>>>()?;
        let mean = fold_scores.iter().sum::<f64>() / folds as f64;
        let std =
            (fold_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / folds as f64).sqrt();
        log::info!(
            "C={} gamma={} {:?}: mean {mean:.4} std {std:.4}",
            params.c,
            params.gamma,
            params.class_weight
        );
        candidates.push(CandidateResult {
            params: *params,
            fold_scores,
            mean,
            std,
        });
    }
    let best = select_best(&candidates).expect("non-empty grid");
    let all: Vec<usize> = (0..y.len()).collect();
    let (model, _) = train_svm_on(&data, y, &all, &candidates[best].params)?;
    Ok(GridSearchReport {
        folds,
        seed,
        candidates,
        best,
        model,
    })
}

//! End-to-end steps shared by the command-line tool and the examples.

use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};

use crate::classifier::{ActionModel, ForestParams, SvmParams};
use crate::error::{Error, Result};
use crate::forecaster::{forecast_rmse, train_forecaster, ForecastModel, TrainConfig};
use crate::frames::{read_dataset, ActionLabel, Dataset, Recording, DEFAULT_VISIBILITY_THRESHOLD};
use crate::metrics::RunSummary;
use crate::model_io::{load_action_model, load_forecaster, CLASSIFIER_FILE, FORECASTER_FILE};
use crate::pipeline::{evaluate_recordings, Alignment, Decision, Models};
use crate::windows::{
    split_assignment, DatasetSplit, WindowSet, WindowSource, INPUT_LEN, OUTPUT_LEN,
};

/// Stacks the featurized frames of labeled recordings into one matrix.
pub fn labeled_matrix(recordings: &[Recording]) -> Result<(Array2<f64>, Vec<ActionLabel>)> {
    if recordings.is_empty() {
        return Err(Error::Empty("recordings"));
    }
    let mut mats = Vec::with_capacity(recordings.len());
    let mut labels = Vec::new();
    for r in recordings {
        let l = r.labels.as_ref().ok_or_else(|| Error::Invariant {
            session_id: r.session_id.clone(),
            frame_index: 0,
            message: "recording is unlabeled".into(),
        })?;
        mats.push(r.feature_matrix(DEFAULT_VISIBILITY_THRESHOLD)?);
        labels.extend_from_slice(l);
    }
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    let x = concatenate(Axis(0), &views).map_err(|e| Error::Shape {
        expected: "equal feature widths".into(),
        found: e.to_string(),
    })?;
    Ok((x, labels))
}

/// Writes a recording-level split into the dataset manifest and returns it.
pub fn split_dataset_dir(
    dir: impl AsRef<Path>,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let mut dataset = read_dataset(dir)?;
    let assignment = split_assignment(&dataset.recordings, test_fraction, seed)?;
    for (entry, side) in dataset.manifest.sessions.iter_mut().zip(&assignment) {
        entry.split = Some(*side);
    }
    dataset.manifest.save(dir)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, side) in dataset.recordings.into_iter().zip(assignment) {
        match side {
            crate::frames::Split::Train => train.push(r),
            crate::frames::Split::Test => test.push(r),
        }
    }
    let tally = |rs: &[Recording]| {
        rs.iter().fold([0; ActionLabel::COUNT], |mut acc, r| {
            for (a, c) in acc.iter_mut().zip(r.label_counts()) {
                *a += c;
            }
            acc
        })
    };
    Ok(DatasetSplit {
        train_counts: tally(&train),
        test_counts: tally(&test),
        train,
        test,
    })
}

/// Trains the forecaster on every train-side window at `stride`.
pub fn fit_forecaster(
    train: &[Recording],
    stride: usize,
    config: &TrainConfig,
) -> Result<ForecastModel> {
    let windows = WindowSet::from_recordings(train, INPUT_LEN, OUTPUT_LEN, stride)?;
    log::info!("training forecaster on {} windows", windows.len());
    train_forecaster(&windows, config)
}

pub enum ClassifierSpec {
    Svm(SvmParams),
    Forest(ForestParams),
}

pub fn fit_classifier(train: &[Recording], spec: &ClassifierSpec) -> Result<ActionModel> {
    let (x, y) = labeled_matrix(train)?;
    log::info!("training classifier on {} frames", x.nrows());
    Ok(match spec {
        ClassifierSpec::Svm(p) => ActionModel::Svm(crate::classifier::train_svm(x.view(), &y, p)?),
        ClassifierSpec::Forest(p) => {
            ActionModel::Forest(crate::classifier::train_forest(x.view(), &y, p)?)
        }
    })
}

/// Loads `forecaster.iism` and `classifier.iism` from a model directory.
pub fn load_models(dir: impl AsRef<Path>) -> Result<(ForecastModel, ActionModel, Models)> {
    let dir = dir.as_ref();
    let forecaster = load_forecaster(dir.join(FORECASTER_FILE), None)?;
    let classifier = load_action_model(dir.join(CLASSIFIER_FILE), Some(forecaster.arch.dim))?;
    let models = Models::new(Arc::new(forecaster.clone()), Arc::new(classifier.clone()))?;
    Ok((forecaster, classifier, models))
}

/// Runs the timing classifier over the test recordings and summarizes it,
/// including the forecaster RMSE over every stride-1 test window.
pub fn evaluate(
    models: &Models,
    forecaster: Option<&ForecastModel>,
    test: &[Recording],
    alignment: Alignment,
) -> Result<(RunSummary, Vec<Vec<Decision>>)> {
    if test.is_empty() {
        return Err(Error::Empty("test recordings"));
    }
    let (cm, decisions) = evaluate_recordings(models, test, alignment)?;
    let rmse = match forecaster {
        Some(f) => {
            let windows = WindowSet::from_recordings(test, INPUT_LEN, OUTPUT_LEN, 1)?;
            if windows.is_empty() {
                None
            } else {
                Some(forecast_rmse(f, &windows)?)
            }
        }
        None => None,
    };
    Ok((RunSummary::new(cm, rmse, test.len()), decisions))
}

/// Train and test recordings of a split dataset directory.
pub fn load_split(dir: impl AsRef<Path>) -> Result<(Dataset, Vec<Recording>, Vec<Recording>)> {
    let dataset = read_dataset(dir)?;
    let train = dataset.train()?;
    let test = dataset.test()?;
    Ok((dataset, train, test))
}

//! Single-frame action classifiers.

pub mod forest;
pub mod grid;
pub mod kernel;
pub mod svm;

use ndarray::ArrayView2;

use crate::error::Result;
use crate::frames::ActionLabel;

pub use forest::{predict_forest, train_forest, ForestModel, ForestParams, MaxFeatures, Tree};
pub use grid::{default_grid, grid_search, stratified_folds, CandidateResult, GridSearchReport};
pub use kernel::{resolve_gamma_scale, KernelData};
pub use svm::{
    aggregate_pairwise, class_weight_vector, train_svm, train_svm_on, BinaryProblem,
    BinarySolution, ClassWeight, Gamma, PairMachine, PairReport, SvmModel, SvmParams,
    SvmPrediction,
};

/// Maps one feature vector to an action.
pub trait ActionClassifier: Send + Sync {
    fn dim(&self) -> usize;

    fn classify(&self, x: &[f64]) -> Result<ActionLabel>;

    fn classify_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<ActionLabel>> {
        rows.rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.classify(s),
                None => self.classify(&r.to_vec()),
            })
            .collect()
    }
}

/// A trained classifier of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionModel {
    Svm(SvmModel),
    Forest(ForestModel),
}

impl ActionModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ActionModel::Svm(_) => "svm",
            ActionModel::Forest(_) => "forest",
        }
    }
}

impl ActionClassifier for SvmModel {
    fn dim(&self) -> usize {
        SvmModel::dim(self)
    }

    fn classify(&self, x: &[f64]) -> Result<ActionLabel> {
        Ok(self.predict(x)?.label)
    }

    fn classify_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<ActionLabel>> {
        Ok(self
            .predict_rows(rows)?
            .into_iter()
            .map(|p| p.label)
            .collect())
    }
}

impl ActionClassifier for ForestModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn classify(&self, x: &[f64]) -> Result<ActionLabel> {
        self.predict(x)
    }
}

impl ActionClassifier for ActionModel {
    fn dim(&self) -> usize {
        match self {
            ActionModel::Svm(m) => ActionClassifier::dim(m),
            ActionModel::Forest(m) => m.dim,
        }
    }

    fn classify(&self, x: &[f64]) -> Result<ActionLabel> {
        match self {
            ActionModel::Svm(m) => m.classify(x),
            ActionModel::Forest(m) => m.classify(x),
        }
    }

    fn classify_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<ActionLabel>> {
        match self {
            ActionModel::Svm(m) => m.classify_rows(rows),
            ActionModel::Forest(m) => m.classify_rows(rows),
        }
    }
}

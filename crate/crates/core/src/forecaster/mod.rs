//! Human pose forecasting: maps the last 10 feature rows to the next 5.

mod gradcheck;
pub mod model;
mod train;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{feature_kind, FeatureKind, FEATURE_LEN};
use crate::windows::WindowSource;

pub use gradcheck::{gradient_check, gradient_check_with, loss_and_gradient, GRADCHECK_COORDS};
pub use model::{Architecture, CellKind, Tensors};
pub use train::{train_forecaster, AdamSettings, TrainConfig};

/// Which output entries [`ForecastModel::forecast`] clamps to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampLayout {
    /// x, y and blendshape entries of the 1682-value layout; z is left free.
    Canonical,
    None,
}

impl ClampLayout {
    pub fn for_dim(dim: usize) -> Self {
        if dim == FEATURE_LEN {
            ClampLayout::Canonical
        } else {
            ClampLayout::None
        }
    }

    pub fn apply(self, rows: &mut Array2<f64>) {
        if self == ClampLayout::None {
            return;
        }
        for mut row in rows.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                if feature_kind(i) != FeatureKind::Z {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean mini-batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Full-batch training loss after the first epoch.
    pub first_epoch_full_loss: Option<f64>,
    /// Full-batch training loss after the last epoch.
    pub final_full_loss: Option<f64>,
    pub optimizer: String,
}

/// A trained (or freshly initialized) block forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub arch: Architecture,
    pub params: Tensors,
    pub clamp: ClampLayout,
    pub config: Option<TrainConfig>,
    pub log: TrainingLog,
}

/// Anything that can produce the next `output_len` rows from a history.
pub trait Forecaster: Send + Sync {
    fn dim(&self) -> usize;
    fn input_len(&self) -> usize;
    /// Returns the forecast rows, clamped to valid feature ranges.
    fn forecast(&self, history: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl ForecastModel {
    /// Seeded random initialization.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        arch.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(ForecastModel {
            params: model::init_params(&arch, &mut rng),
            clamp: ClampLayout::for_dim(arch.dim),
            arch,
            config: None,
            log: TrainingLog::default(),
        })
    }

    /// All weights zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(ForecastModel {
            params: model::zeros_like(&arch),
            clamp: ClampLayout::for_dim(arch.dim),
            arch,
            config: None,
            log: TrainingLog::default(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, history: &ArrayView2<'_, f64>) -> Result<()> {
        let want = (self.arch.input_len, self.arch.dim);
        if history.dim() != want {
            return Err(Error::Shape {
                expected: format!("{}x{}", want.0, want.1),
                found: format!("{}x{}", history.nrows(), history.ncols()),
            });
        }
        Ok(())
    }

    /// Raw decoder output for a batch of histories, `B × (O·d)`.
    pub fn predict_batch_raw(&self, histories: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        for h in histories {
            self.check_input(h)?;
        }
        let stacked = model::stack_time_major(histories, self.arch.input_len, self.arch.dim)?;
        Ok(model::forward(&self.arch, &self.params, stacked, histories.len()).output)
    }

    /// Unclamped forecast, `output_len × dim`.
    pub fn forecast_raw(&self, history: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let flat = self.predict_batch_raw(&[history])?;
        Ok(flat
            .into_shape_with_order((self.arch.output_len, self.arch.dim))
            .expect("decoder width is output_len × dim"))
    }

    /// Forecast clamped to valid feature ranges.
    pub fn forecast(&self, history: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut rows = self.forecast_raw(history)?;
        self.clamp.apply(&mut rows);
        Ok(rows)
    }
}

impl Forecaster for ForecastModel {
    fn dim(&self) -> usize {
        self.arch.dim
    }
    fn input_len(&self) -> usize {
        self.arch.input_len
    }
    fn forecast(&self, history: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        ForecastModel::forecast(self, history)
    }
}

const EVAL_CHUNK: usize = 256;

/// Sum of squared errors and entry count over all windows, on raw outputs.
pub(crate) fn squared_error<W: WindowSource + ?Sized>(
    model: &ForecastModel,
    windows: &W,
) -> Result<(f64, usize)> {
    let (steps_out, dim) = (model.arch.output_len, model.arch.dim);
    let mut sse = 0.0;
    let mut count = 0;
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let inputs: Vec<_> = chunk.iter().map(|&i| windows.input(i)).collect();
        let targets: Vec<_> = chunk.iter().map(|&i| windows.target(i)).collect();
        let out = model.predict_batch_raw(&inputs)?;
        let tgt = model::flatten_targets(&targets, steps_out, dim)?;
        sse += out
            .iter()
            .zip(tgt.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += tgt.len();
    }
    Ok((sse, count))
}

/// Root mean squared error over every target entry of every window,
/// computed on unclamped outputs.
pub fn forecast_rmse<W: WindowSource + ?Sized>(model: &ForecastModel, windows: &W) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Empty("windows"));
    }
    let (sse, count) = squared_error(model, windows)?;
    Ok((sse / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windows::{WindowSample, INPUT_LEN, OUTPUT_LEN};

    fn canonical_arch(hidden: usize) -> Architecture {
        Architecture {
            dim: FEATURE_LEN,
            hidden,
            layers: 1,
            cell: CellKind::Tanh,
            input_len: INPUT_LEN,
            output_len: OUTPUT_LEN,
        }
    }

    #[test]
    fn zero_model_outputs_clamped_bias() {
        let mut model = ForecastModel::zeros(canonical_arch(4)).unwrap();
        let d = model.arch.decoder_index();
        for (i, b) in model.params[d + 1].iter_mut().enumerate() {
            *b = (i % 7) as f64 * 0.4 - 1.0;
        }
        let bias = model.params[d + 1].clone();
        let out = model
            .forecast(Array2::from_elem((10, FEATURE_LEN), 0.3).view())
            .unwrap();
        assert_eq!(out.dim(), (5, FEATURE_LEN));
        for r in 0..5 {
            for c in 0..FEATURE_LEN {
                let raw = bias[[0, r * FEATURE_LEN + c]];
                let want = if feature_kind(c) == FeatureKind::Z {
                    raw
                } else {
                    raw.clamp(0.0, 1.0)
                };
                assert_eq!(out[[r, c]], want);
            }
        }
    }

    #[test]
    fn wrong_history_shape_rejected() {
        let model = ForecastModel::zeros(canonical_arch(2)).unwrap();
        assert!(model
            .forecast(Array2::zeros((9, FEATURE_LEN)).view())
            .is_err());
        assert!(model
            .forecast(Array2::zeros((10, FEATURE_LEN - 1)).view())
            .is_err());
    }

    #[test]
    fn rmse_closed_forms() {
        let arch = Architecture {
            dim: 3,
            hidden: 2,
            layers: 1,
            cell: CellKind::Tanh,
            input_len: 10,
            output_len: 5,
        };
        let model = ForecastModel::zeros(arch).unwrap();
        let w = vec![WindowSample {
            input: Array2::from_elem((10, 3), 0.2),
            target: Array2::from_elem((5, 3), 0.5),
            session_id: "s".into(),
            start: 0,
        }];
        assert!((forecast_rmse(&model, &w).unwrap() - 0.5).abs() < 1e-15);
        let zero = vec![WindowSample {
            target: Array2::zeros((5, 3)),
            ..w[0].clone()
        }];
        assert_eq!(forecast_rmse(&model, &zero).unwrap(), 0.0);
        let empty: Vec<WindowSample> = Vec::new();
        assert!(forecast_rmse(&model, &empty).is_err());
    }
}

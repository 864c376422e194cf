use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{self, Architecture, CellKind, Tensors};
use super::{squared_error, ClampLayout, ForecastModel, TrainingLog};
use crate::error::{Error, Result};
use crate::windows::WindowSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub cell: CellKind,
    pub adam: AdamSettings,
    /// Fixed batch partitioning and reduction order, so a seed fully
    /// determines the trained weights.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 30,
            learning_rate: 1e-3,
            seed: 0,
            hidden: 128,
            layers: 1,
            cell: CellKind::Tanh,
            adam: AdamSettings::default(),
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

struct Adam {
    settings: AdamSettings,
    lr: f64,
    step: i32,
    m: Tensors,
    v: Tensors,
}

impl Adam {
    fn new(arch: &Architecture, lr: f64, settings: AdamSettings) -> Self {
        Adam {
            settings,
            lr,
            step: 0,
            m: model::zeros_like(arch),
            v: model::zeros_like(arch),
        }
    }

    fn update(&mut self, params: &mut Tensors, grads: &Tensors) {
        self.step += 1;
        let AdamSettings {
            beta1,
            beta2,
            epsilon,
        } = self.settings;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                });
        }
    }
}

/// Loss and gradient of one mini-batch, optionally split into parallel
/// chunks whose gradients are reduced in chunk order.
fn batch_gradient<W: WindowSource + ?Sized>(
    arch: &Architecture,
    params: &Tensors,
    windows: &W,
    batch: &[usize],
    chunks: usize,
) -> Result<(f64, Tensors)> {
    let chunk_len = batch.len().div_ceil(chunks.max(1));
    let total = batch.len() as f64;
    let parts: Vec<Result<(f64, Tensors)>> = batch
        .par_chunks(chunk_len)
        .map(|part| {
            let inputs: Vec<_> = part.iter().map(|&i| windows.input(i)).collect();
            let targets: Vec<_> = part.iter().map(|&i| windows.target(i)).collect();
            let stacked = model::stack_time_major(&inputs, arch.input_len, arch.dim)?;
            let target = model::flatten_targets(&targets, arch.output_len, arch.dim)?;
            let cache = model::forward(arch, params, stacked, part.len());
            let (loss, d_out) = model::mse_and_grad(&cache.output, &target);
            // Rescale so chunk gradients sum to the full-batch mean gradient.
            let share = part.len() as f64 / total;
            let grads = model::backward(arch, params, &cache, &(d_out * share));
            Ok((loss * share, grads))
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch")?;
    for part in iter {
        let (l, g) = part?;
        loss += l;
        for (acc, x) in grads.iter_mut().zip(&g) {
            *acc += x;
        }
    }
    Ok((loss, grads))
}

fn full_loss<W: WindowSource + ?Sized>(model: &ForecastModel, windows: &W) -> Result<f64> {
    let (sse, count) = squared_error(model, windows)?;
    Ok(sse / count as f64)
}

/// Trains a block forecaster on `windows` with mini-batch Adam on MSE.
pub fn train_forecaster<W: WindowSource + ?Sized>(
    windows: &W,
    config: &TrainConfig,
) -> Result<ForecastModel> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Empty("training windows"));
    }
    let (input_len, dim) = windows.input(0).dim();
    let (output_len, target_dim) = windows.target(0).dim();
    if target_dim != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: target_dim,
        });
    }
    let arch = Architecture {
        dim,
        hidden: config.hidden,
        layers: config.layers,
        cell: config.cell,
        input_len,
        output_len,
    };
    let mut model = ForecastModel::init(arch, config.seed)?;
    model.clamp = ClampLayout::for_dim(dim);
    let mut adam = Adam::new(&arch, config.learning_rate, config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let chunks = if config.deterministic {
        1
    } else {
        rayon::current_num_threads()
    };

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut log = TrainingLog {
        optimizer: format!(
            "adam(lr={}, beta1={}, beta2={}, eps={}), batch={}, no schedule",
            config.learning_rate,
            config.adam.beta1,
            config.adam.beta2,
            config.adam.epsilon,
            config.batch_size
        ),
        ..TrainingLog::default()
    };
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(&arch, &model.params, windows, batch, chunks)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.update(&mut model.params, &grads);
            epoch_sum += loss * batch.len() as f64;
        }
        let epoch_loss = epoch_sum / windows.len() as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        log.epoch_loss.push(epoch_loss);
        if epoch == 1 || epoch == config.epochs {
            let full = full_loss(&model, windows)?;
            if !full.is_finite() {
                return Err(Error::Diverged { epoch, loss: full });
            }
            if epoch == 1 {
                log.first_epoch_full_loss = Some(full);
            }
            if epoch == config.epochs {
                log.final_full_loss = Some(full);
            }
        }
    }
    if !model.is_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs,
            loss: f64::NAN,
        });
    }
    model.config = Some(config.clone());
    model.log = log;
    Ok(model)
}

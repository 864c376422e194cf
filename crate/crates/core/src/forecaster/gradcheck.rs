use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{self, Tensors};
use super::ForecastModel;
use crate::error::Result;

/// Number of parameter coordinates compared by [`gradient_check`]
/// (all of them when the model is smaller).
pub const GRADCHECK_COORDS: usize = 256;
const GRADCHECK_SEED: u64 = 0x6772_6164;

/// MSE loss of one window and its analytic gradient.
pub fn loss_and_gradient(
    model: &ForecastModel,
    input: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> Result<(f64, Tensors)> {
    let arch = &model.arch;
    let stacked = model::stack_time_major(&[input], arch.input_len, arch.dim)?;
    let flat = model::flatten_targets(&[target], arch.output_len, arch.dim)?;
    let cache = model::forward(arch, &model.params, stacked, 1);
    let (loss, d_out) = model::mse_and_grad(&cache.output, &flat);
    Ok((loss, model::backward(arch, &model.params, &cache, &d_out)))
}

fn loss_only(
    model: &ForecastModel,
    input: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> Result<f64> {
    let arch = &model.arch;
    let stacked = model::stack_time_major(&[input], arch.input_len, arch.dim)?;
    let flat = model::flatten_targets(&[target], arch.output_len, arch.dim)?;
    let out = model::forward(arch, &model.params, stacked, 1).output;
    Ok(model::mse_and_grad(&out, &flat).0)
}

/// Maximum relative error between the analytic gradient and central finite
/// differences over a seeded subsample of parameter coordinates.
pub fn gradient_check(
    model: &ForecastModel,
    input: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    epsilon: f64,
) -> Result<f64> {
    gradient_check_with(model, input, target, epsilon, |_| {})
}

/// [`gradient_check`] with a hook that may alter the analytic gradient
/// before comparison (used for fault injection).
pub fn gradient_check_with(
    model: &ForecastModel,
    input: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    epsilon: f64,
    alter: impl FnOnce(&mut Tensors),
) -> Result<f64> {
    let (_, mut analytic) = loss_and_gradient(model, input, target)?;
    alter(&mut analytic);

    let sizes: Vec<usize> = model.params.iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(GRADCHECK_SEED);
    let mut coords: Vec<usize> = sample(&mut rng, total, GRADCHECK_COORDS.min(total)).into_vec();
    coords.sort_unstable();

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for flat in coords {
        let mut tensor = 0;
        let mut offset = flat;
        while offset >= sizes[tensor] {
            offset -= sizes[tensor];
            tensor += 1;
        }
        let cell = probe.params[tensor]
            .as_slice_mut()
            .expect("standard layout")
            .get_mut(offset)
            .expect("in range");
        let orig = *cell;
        *cell = orig + epsilon;
        let plus = loss_only(&probe, input, target)?;
        probe.params[tensor]
            .as_slice_mut()
            .expect("standard layout")[offset] = orig - epsilon;
        let minus = loss_only(&probe, input, target)?;
        probe.params[tensor]
            .as_slice_mut()
            .expect("standard layout")[offset] = orig;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let exact = analytic[tensor].as_slice().expect("standard layout")[offset];
        let denom = numeric.abs().max(exact.abs()).max(1e-6);
        worst = worst.max((numeric - exact).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::{Architecture, CellKind};
    use ndarray::Array2;
    use rand::Rng;

    fn toy(cell: CellKind, layers: usize) -> (ForecastModel, Array2<f64>, Array2<f64>) {
        let arch = Architecture {
            dim: 4,
            hidden: 8,
            layers,
            cell,
            input_len: 10,
            output_len: 5,
        };
        let model = ForecastModel::init(arch, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Array2::from_shape_simple_fn((10, 4), || rng.random::<f64>());
        let target = Array2::from_shape_simple_fn((5, 4), || rng.random::<f64>());
        (model, input, target)
    }

    #[test]
    fn analytic_matches_finite_differences() {
        for cell in [CellKind::Tanh, CellKind::Gru] {
            for layers in [1, 2] {
                let (model, x, y) = toy(cell, layers);
                let err = gradient_check(&model, x.view(), y.view(), 1e-5).unwrap();
                assert!(err < 1e-4, "{cell:?} x{layers}: {err}");
            }
        }
    }

    #[test]
    fn zero_loss_has_zero_gradient() {
        let (model, x, _) = toy(CellKind::Tanh, 1);
        let target = model.forecast_raw(x.view()).unwrap();
        let (loss, grads) = loss_and_gradient(&model, x.view(), target.view()).unwrap();
        assert_eq!(loss, 0.0);
        let max = grads
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-8);
    }

    #[test]
    fn corrupted_decoder_gradient_is_caught() {
        let (model, x, y) = toy(CellKind::Tanh, 1);
        let d = model.arch.decoder_index();
        let err = gradient_check_with(&model, x.view(), y.view(), 1e-5, |g| {
            g[d].mapv_inplace(|v| v * 1.1);
        })
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }
}

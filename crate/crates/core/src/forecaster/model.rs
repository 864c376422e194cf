//! Block recurrent forecaster: a stacked recurrent encoder reads the input
//! chunk, and an affine decoder maps the last hidden state to the whole
//! output chunk in one shot.
//!
//! Batches are stored time-major: row `t * batch + b` of a stacked matrix is
//! step `t` of sample `b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Elman cell, `h' = tanh(x W + h U + b)`.
    Tanh,
    /// Gated recurrent unit with the reset gate applied before the
    /// recurrent candidate projection.
    Gru,
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" | "rnn" => Ok(CellKind::Tanh),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Tanh => 1,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub cell: CellKind,
    pub input_len: usize,
    pub output_len: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0
            || self.hidden == 0
            || self.layers == 0
            || self.input_len == 0
            || self.output_len == 0
        {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.output_len * self.dim
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.dim
        } else {
            self.hidden
        }
    }

    /// Shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let h = self.hidden;
        let g = self.cell.gates();
        let mut shapes = Vec::new();
        for l in 0..self.layers {
            let input = self.layer_input(l);
            shapes.push((format!("layer{l}.w_in"), (input, g * h)));
            match self.cell {
                CellKind::Tanh => shapes.push((format!("layer{l}.w_rec"), (h, h))),
                CellKind::Gru => {
                    shapes.push((format!("layer{l}.w_rec_zr"), (h, 2 * h)));
                    shapes.push((format!("layer{l}.w_rec_n"), (h, h)));
                }
            }
            shapes.push((format!("layer{l}.bias"), (1, g * h)));
        }
        shapes.push(("decoder.w".into(), (h, self.output_width())));
        shapes.push(("decoder.b".into(), (1, self.output_width())));
        shapes
    }

    fn tensors_per_layer(&self) -> usize {
        match self.cell {
            CellKind::Tanh => 3,
            CellKind::Gru => 4,
        }
    }

    /// Index of the first decoder tensor.
    pub fn decoder_index(&self) -> usize {
        self.layers * self.tensors_per_layer()
    }
}

/// Parameter (or gradient) tensors in [`Architecture::param_shapes`] order.
pub type Tensors = Vec<Array2<f64>>;

pub fn zeros_like(arch: &Architecture) -> Tensors {
    arch.param_shapes()
        .into_iter()
        .map(|(_, shape)| Array2::zeros(shape))
        .collect()
}

/// Uniform `±1/sqrt(fan_in)` weights; biases start at zero.
pub fn init_params<R: Rng>(arch: &Architecture, rng: &mut R) -> Tensors {
    arch.param_shapes()
        .into_iter()
        .map(|(name, (rows, cols))| {
            if name.ends_with("bias") || name.ends_with(".b") {
                Array2::zeros((rows, cols))
            } else {
                let bound = 1.0 / (rows as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                Array2::from_shape_simple_fn((rows, cols), || rng.sample(dist))
            }
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LayerCache {
    /// Stacked layer input, `T·B × in`.
    input: Array2<f64>,
    /// Hidden states `h_0..h_T` stacked, `(T+1)·B × H`.
    hs: Array2<f64>,
    /// GRU only: update gate, reset gate, candidate and `r ⊙ h_{t-1}`, each `T·B × H`.
    gates: Option<[Array2<f64>; 4]>,
}

/// Forward activations kept for the backward pass.
pub struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
    pub output: Array2<f64>,
}

/// Stacks `B` windows of shape `T × d` into a time-major `T·B × d` matrix.
pub fn stack_time_major(
    windows: &[ArrayView2<'_, f64>],
    steps: usize,
    dim: usize,
) -> Result<Array2<f64>> {
    let batch = windows.len();
    let mut out = Array2::zeros((steps * batch, dim));
    for (b, w) in windows.iter().enumerate() {
        if w.dim() != (steps, dim) {
            return Err(Error::Shape {
                expected: format!("{steps}x{dim}"),
                found: format!("{}x{}", w.nrows(), w.ncols()),
            });
        }
        for t in 0..steps {
            out.row_mut(t * batch + b).assign(&w.row(t));
        }
    }
    Ok(out)
}

/// Flattens `B` targets of shape `O × d` row-major into `B × O·d`.
pub fn flatten_targets(
    targets: &[ArrayView2<'_, f64>],
    steps: usize,
    dim: usize,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((targets.len(), steps * dim));
    for (b, t) in targets.iter().enumerate() {
        if t.dim() != (steps, dim) {
            return Err(Error::Shape {
                expected: format!("{steps}x{dim}"),
                found: format!("{}x{}", t.nrows(), t.ncols()),
            });
        }
        for (k, row) in t.rows().into_iter().enumerate() {
            out.slice_mut(s![b, k * dim..(k + 1) * dim]).assign(&row);
        }
    }
    Ok(out)
}

fn block(m: &Array2<f64>, t: usize, batch: usize) -> ArrayView2<'_, f64> {
    m.slice(s![t * batch..(t + 1) * batch, ..])
}

/// Runs the network on a time-major stacked input (`T·B × d`).
pub fn forward(
    arch: &Architecture,
    params: &Tensors,
    stacked: Array2<f64>,
    batch: usize,
) -> ForwardCache {
    let h = arch.hidden;
    let steps = arch.input_len;
    let per = arch.tensors_per_layer();
    let mut layers = Vec::with_capacity(arch.layers);
    let mut input = stacked;
    for l in 0..arch.layers {
        let p = &params[l * per..(l + 1) * per];
        let w_in = &p[0];
        let bias = &p[per - 1];
        let mut proj = input.dot(w_in);
        proj += &bias.row(0);
        let mut hs = Array2::zeros(((steps + 1) * batch, h));
        let gates = match arch.cell {
            CellKind::Tanh => {
                let w_rec = &p[1];
                for t in 0..steps {
                    let mut a = block(&proj, t, batch).to_owned();
                    general_mat_mul(1.0, &block(&hs, t, batch), w_rec, 1.0, &mut a);
                    a.mapv_inplace(f64::tanh);
                    hs.slice_mut(s![(t + 1) * batch..(t + 2) * batch, ..])
                        .assign(&a);
                }
                None
            }
            CellKind::Gru => {
                let (w_zr, w_n) = (&p[1], &p[2]);
                let mut z_all = Array2::zeros((steps * batch, h));
                let mut r_all = Array2::zeros((steps * batch, h));
                let mut n_all = Array2::zeros((steps * batch, h));
                let mut rh_all = Array2::zeros((steps * batch, h));
                for t in 0..steps {
                    let prev = block(&hs, t, batch).to_owned();
                    let px = block(&proj, t, batch);
                    let mut zr = px.slice(s![.., ..2 * h]).to_owned();
                    general_mat_mul(1.0, &prev, w_zr, 1.0, &mut zr);
                    zr.mapv_inplace(sigmoid);
                    let z = zr.slice(s![.., ..h]).to_owned();
                    let r = zr.slice(s![.., h..]).to_owned();
                    let rh = &r * &prev;
                    let mut n = px.slice(s![.., 2 * h..]).to_owned();
                    general_mat_mul(1.0, &rh, w_n, 1.0, &mut n);
                    n.mapv_inplace(f64::tanh);
                    let next = &n + &(&z * &(&prev - &n));
                    hs.slice_mut(s![(t + 1) * batch..(t + 2) * batch, ..])
                        .assign(&next);
                    let rows = s![t * batch..(t + 1) * batch, ..];
                    z_all.slice_mut(rows).assign(&z);
                    r_all.slice_mut(rows).assign(&r);
                    n_all.slice_mut(rows).assign(&n);
                    rh_all.slice_mut(rows).assign(&rh);
                }
                Some([z_all, r_all, n_all, rh_all])
            }
        };
        let next_input = hs.slice(s![batch.., ..]).to_owned();
        layers.push(LayerCache { input, hs, gates });
        input = next_input;
    }
    let d = arch.decoder_index();
    let last = block(&layers.last().expect("at least one layer").hs, steps, batch).to_owned();
    let mut output = last.dot(&params[d]);
    output += &params[d + 1].row(0);
    ForwardCache {
        batch,
        layers,
        output,
    }
}

/// Back-propagates `d_output` (`B × O·d`) and returns parameter gradients.
pub fn backward(
    arch: &Architecture,
    params: &Tensors,
    cache: &ForwardCache,
    d_output: &Array2<f64>,
) -> Tensors {
    let h = arch.hidden;
    let steps = arch.input_len;
    let batch = cache.batch;
    let per = arch.tensors_per_layer();
    let mut grads = zeros_like(arch);

    let d = arch.decoder_index();
    let top = cache.layers.last().expect("at least one layer");
    let last = block(&top.hs, steps, batch);
    grads[d] = last.t().dot(d_output);
    grads[d + 1] = d_output.sum_axis(Axis(0)).insert_axis(Axis(0));

    // Gradient w.r.t. the stacked hidden outputs of the current layer.
    let mut d_hidden_out = Array2::<f64>::zeros((steps * batch, h));
    d_hidden_out
        .slice_mut(s![(steps - 1) * batch.., ..])
        .assign(&d_output.dot(&params[d].t()));

    for l in (0..arch.layers).rev() {
        let p = &params[l * per..(l + 1) * per];
        let lc = &cache.layers[l];
        let g = arch.cell.gates();
        let mut d_proj = Array2::<f64>::zeros((steps * batch, g * h));
        let mut carry = Array2::<f64>::zeros((batch, h));
        match arch.cell {
            CellKind::Tanh => {
                let w_rec = &p[1];
                let mut d_rec = Array2::<f64>::zeros((h, h));
                for t in (0..steps).rev() {
                    let h_t = block(&lc.hs, t + 1, batch);
                    let h_prev = block(&lc.hs, t, batch);
                    let dh = &block(&d_hidden_out, t, batch) + &carry;
                    let da = &dh * &h_t.mapv(|v| 1.0 - v * v);
                    general_mat_mul(1.0, &h_prev.t(), &da, 1.0, &mut d_rec);
                    carry = da.dot(&w_rec.t());
                    d_proj
                        .slice_mut(s![t * batch..(t + 1) * batch, ..])
                        .assign(&da);
                }
                grads[l * per + 1] = d_rec;
            }
            CellKind::Gru => {
                let (w_zr, w_n) = (&p[1], &p[2]);
                let [z_all, r_all, n_all, rh_all] = lc.gates.as_ref().expect("gru cache");
                let mut d_zr_w = Array2::<f64>::zeros((h, 2 * h));
                let mut d_n_w = Array2::<f64>::zeros((h, h));
                for t in (0..steps).rev() {
                    let h_prev = block(&lc.hs, t, batch);
                    let z = block(z_all, t, batch);
                    let r = block(r_all, t, batch);
                    let n = block(n_all, t, batch);
                    let rh = block(rh_all, t, batch);
                    let dh = &block(&d_hidden_out, t, batch) + &carry;

                    let dn = &dh * &z.mapv(|v| 1.0 - v);
                    let dz = &dh * &(&h_prev - &n);
                    let mut dh_prev = &dh * &z;

                    let dan = &dn * &n.mapv(|v| 1.0 - v * v);
                    general_mat_mul(1.0, &rh.t(), &dan, 1.0, &mut d_n_w);
                    let d_rh = dan.dot(&w_n.t());
                    let dr = &d_rh * &h_prev;
                    dh_prev += &(&d_rh * &r);

                    let daz = &dz * &z.mapv(|v| v * (1.0 - v));
                    let dar = &dr * &r.mapv(|v| v * (1.0 - v));
                    let mut d_zr = Array2::<f64>::zeros((batch, 2 * h));
                    d_zr.slice_mut(s![.., ..h]).assign(&daz);
                    d_zr.slice_mut(s![.., h..]).assign(&dar);
                    general_mat_mul(1.0, &h_prev.t(), &d_zr, 1.0, &mut d_zr_w);
                    general_mat_mul(1.0, &d_zr, &w_zr.t(), 1.0, &mut dh_prev);

                    let mut rows = d_proj.slice_mut(s![t * batch..(t + 1) * batch, ..]);
                    rows.slice_mut(s![.., ..2 * h]).assign(&d_zr);
                    rows.slice_mut(s![.., 2 * h..]).assign(&dan);
                    carry = dh_prev;
                }
                grads[l * per + 1] = d_zr_w;
                grads[l * per + 2] = d_n_w;
            }
        }
        grads[l * per] = lc.input.t().dot(&d_proj);
        grads[l * per + per - 1] = d_proj.sum_axis(Axis(0)).insert_axis(Axis(0));
        if l > 0 {
            d_hidden_out = d_proj.dot(&p[0].t());
        }
    }
    grads
}

/// Mean squared error over every target entry and its gradient w.r.t. the output.
pub fn mse_and_grad(output: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = output - target;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

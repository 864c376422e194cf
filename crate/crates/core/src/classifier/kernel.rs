//! RBF kernel evaluation over a training matrix, with an optional
//! precomputed squared-distance matrix and a bounded row cache.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Squared-distance matrices up to this size are precomputed.
pub const DEFAULT_PRECOMPUTE_BYTES: usize = 1_500 * 1024 * 1024;
/// Budget for cached kernel rows inside one binary solve.
pub const DEFAULT_CACHE_BYTES: usize = 256 * 1024 * 1024;

/// `γ = 1 / (d · Var(X))`, with the population variance over every entry.
pub fn resolve_gamma_scale(x: ArrayView2<'_, f64>) -> Result<f64> {
    gamma_scale_rows(x, None)
}

/// [`resolve_gamma_scale`] restricted to a subset of rows.
pub fn gamma_scale_rows(x: ArrayView2<'_, f64>, rows: Option<&[usize]>) -> Result<f64> {
    let d = x.ncols();
    let n_rows = rows.map_or(x.nrows(), |r| r.len());
    if n_rows == 0 || d == 0 {
        return Err(Error::Empty("training matrix"));
    }
    let count = (n_rows * d) as f64;
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..x.nrows()).collect();
            &all
        }
    };
    let mean = rows.iter().map(|&i| x.row(i).sum()).sum::<f64>() / count;
    let var = rows
        .iter()
        .map(|&i| {
            x.row(i)
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
        })
        .sum::<f64>()
        / count;
    if !var.is_finite() {
        return Err(Error::NonFinite("training matrix"));
    }
    let first = x[[rows[0], 0]];
    if var <= 0.0 || rows.iter().all(|&i| x.row(i).iter().all(|&v| v == first)) {
        return Err(Error::Degenerate(
            "all training entries are equal (zero variance)".into(),
        ));
    }
    Ok(1.0 / (d as f64 * var))
}

/// Training rows plus what is needed to evaluate RBF kernels among them.
pub struct KernelData<'a> {
    x: ArrayView2<'a, f64>,
    sq_norms: Vec<f64>,
    sqdist: Option<Array2<f64>>,
}

impl<'a> KernelData<'a> {
    pub fn new(x: ArrayView2<'a, f64>, precompute_bytes: usize) -> Self {
        let n = x.nrows();
        let sq_norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
        let sqdist =
            (n.saturating_mul(n).saturating_mul(8) <= precompute_bytes && n > 0).then(|| {
                let mut g = x.dot(&x.t());
                for (i, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (sq_norms[i] + sq_norms[j] - 2.0 * *v).max(0.0);
                    }
                    row[i] = 0.0;
                }
                g
            });
        KernelData {
            x,
            sq_norms,
            sqdist,
        }
    }

    pub fn x(&self) -> ArrayView2<'a, f64> {
        self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_precomputed(&self) -> bool {
        self.sqdist.is_some()
    }

    /// `out[k] = exp(-γ ‖x_i − x_{cols[k]}‖²)`.
    pub fn row(&self, i: usize, cols: &[usize], gamma: f64, out: &mut [f64]) {
        debug_assert_eq!(cols.len(), out.len());
        match &self.sqdist {
            Some(d) => {
                let row = d.row(i);
                for (o, &j) in out.iter_mut().zip(cols) {
                    *o = (-gamma * row[j]).exp();
                }
            }
            None => {
                let xi = self.x.row(i);
                let ni = self.sq_norms[i];
                for (o, &j) in out.iter_mut().zip(cols) {
                    let d2 = if i == j {
                        0.0
                    } else {
                        (ni + self.sq_norms[j] - 2.0 * xi.dot(&self.x.row(j))).max(0.0)
                    };
                    *o = (-gamma * d2).exp();
                }
            }
        }
    }
}

/// LRU cache of kernel rows for one binary sub-problem.
pub(crate) struct RowCache<'d, 'a> {
    data: &'d KernelData<'a>,
    members: &'d [usize],
    gamma: f64,
    capacity: usize,
    rows: HashMap<usize, (u64, Vec<f64>)>,
    clock: u64,
}

impl<'d, 'a> RowCache<'d, 'a> {
    pub fn new(
        data: &'d KernelData<'a>,
        members: &'d [usize],
        gamma: f64,
        budget_bytes: usize,
    ) -> Self {
        let row_bytes = (members.len() * 8).max(1);
        RowCache {
            data,
            members,
            gamma,
            capacity: (budget_bytes / row_bytes).max(2),
            rows: HashMap::new(),
            clock: 0,
        }
    }

    /// Kernel row of local index `i` against every member.
    pub fn get(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let now = self.clock;
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                let oldest = self
                    .rows
                    .iter()
                    .min_by_key(|(_, (t, _))| *t)
                    .map(|(&k, _)| k)
                    .expect("non-empty cache");
                self.rows.remove(&oldest);
            }
            let mut row = vec![0.0; self.members.len()];
            self.data
                .row(self.members[i], self.members, self.gamma, &mut row);
            self.rows.insert(i, (now, row));
        }
        let entry = self.rows.get_mut(&i).expect("row present");
        entry.0 = now;
        &entry.1
    }
}

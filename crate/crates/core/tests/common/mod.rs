//! Reference implementations used only by tests. They favour obviousness
//! over speed and share no code with the library solvers.

#![allow(dead_code)]

use iis_core::frames::ActionLabel;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rbf_matrix(x: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d: f64 = x
            .row(i)
            .iter()
            .zip(x.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-gamma * d).exp()
    })
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    (-gamma * d).exp()
}

/// Euclidean projection onto `{0 ≤ a ≤ cap, yᵀa = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], cap: &[f64]) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .zip(cap)
            .map(|((vi, yi), ci)| (vi - lambda * yi).clamp(0.0, *ci))
            .collect()
    };
    let h = |lambda: f64| -> f64 { at(lambda).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    // h is non-increasing in lambda.
    let (mut lo, mut hi) = (-1.0, 1.0);
    while h(lo) < 0.0 {
        lo *= 2.0;
    }
    while h(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub objective: f64,
    /// Offset of the decision function `Σ α_k y_k K(x_k, x) − rho`,
    /// or `None` when no variable is strictly inside its box.
    pub rho: Option<f64>,
}

pub fn dual_objective(k: &Array2<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[[i, j]];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Accelerated projected gradient on the SVM dual.
pub fn solve_dual(k: &Array2<f64>, y: &[f64], cap: &[f64]) -> QpSolution {
    let n = y.len();
    let q = Array2::from_shape_fn((n, n), |(i, j)| y[i] * y[j] * k[[i, j]]);
    let lipschitz = (0..n)
        .map(|i| q.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                q.row(i)
                    .iter()
                    .zip(a)
                    .map(|(qij, aj)| qij * aj)
                    .sum::<f64>()
                    - 1.0
            })
            .collect()
    };

    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..100_000 {
        let g = grad(&z);
        let v: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&v, y, cap);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        z = next
            .iter()
            .zip(&a)
            .map(|(ni, ai)| ni + momentum * (ni - ai))
            .collect();
        let moved: f64 = next
            .iter()
            .zip(&a)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        a = next;
        t = t_next;
        if moved < 1e-13 {
            break;
        }
    }

    let g = grad(&a);
    let scale = cap.iter().cloned().fold(0.0, f64::max);
    let free: Vec<usize> = (0..n)
        .filter(|&i| a[i] > 1e-7 * scale && a[i] < cap[i] - 1e-7 * scale)
        .collect();
    // For a free variable, y_i f(x_i) = 1, i.e. rho = y_i g_i.
    let rho = (!free.is_empty())
        .then(|| free.iter().map(|&i| y[i] * g[i]).sum::<f64>() / free.len() as f64);
    QpSolution {
        objective: dual_objective(k, y, &a),
        alpha: a,
        rho,
    }
}

pub struct QpFixture {
    pub name: &'static str,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub cap: Vec<f64>,
    pub gamma: f64,
}

fn blobs(seed: u64, n: usize, dim: usize, sep: f64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let x = Array2::from_shape_fn((n, dim), |(i, _)| y[i] * sep + rng.random_range(-1.0..1.0));
    (x, y)
}

/// Small dual problems covering separable, overlapping, weighted and
/// degenerate cases.
pub fn qp_fixtures() -> Vec<QpFixture> {
    let mut out = Vec::new();

    let (x, y) = blobs(1, 12, 2, 1.0);
    out.push(QpFixture {
        name: "separable blobs",
        cap: vec![10.0; 12],
        x,
        y,
        gamma: 0.5,
    });

    let (x, y) = blobs(2, 20, 3, 0.2);
    out.push(QpFixture {
        name: "overlapping blobs",
        cap: vec![1.0; 20],
        x,
        y,
        gamma: 1.0,
    });

    let (x, y) = blobs(3, 16, 2, 0.4);
    let cap = y.iter().map(|&v| if v > 0.0 { 0.3 } else { 2.5 }).collect();
    out.push(QpFixture {
        name: "unequal boxes",
        x,
        y,
        cap,
        gamma: 0.8,
    });

    let x = ndarray::array![
        [0.0, 0.0],
        [1.0, 1.0],
        [0.0, 1.0],
        [1.0, 0.0],
        [0.1, 0.1],
        [0.9, 0.9],
        [0.1, 0.9],
        [0.9, 0.1]
    ];
    out.push(QpFixture {
        name: "xor",
        x,
        y: vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0],
        cap: vec![5.0; 8],
        gamma: 2.0,
    });

    let x = ndarray::array![[0.2], [0.2], [0.5], [0.5], [0.9], [0.1], [0.7]];
    out.push(QpFixture {
        name: "duplicates with opposite labels",
        x,
        y: vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0],
        cap: vec![0.7; 7],
        gamma: 3.0,
    });

    let (x, y) = blobs(6, 9, 4, 0.6);
    let y = y
        .iter()
        .enumerate()
        .map(|(i, _)| if i < 2 { 1.0 } else { -1.0 })
        .collect();
    out.push(QpFixture {
        name: "imbalanced",
        x,
        y,
        cap: vec![2.0; 9],
        gamma: 0.3,
    });
    out
}

/// Three-class data with a few points per class in `dim` dimensions.
pub fn three_class(
    seed: u64,
    per_class: usize,
    dim: usize,
    spread: f64,
) -> (Array2<f64>, Vec<ActionLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = per_class * 3;
    let y: Vec<ActionLabel> = (0..n).map(|i| ActionLabel::ALL[i % 3]).collect();
    let x = Array2::from_shape_fn((n, dim), |(i, j)| {
        let centre = if j % 3 == y[i].index() { 1.0 } else { 0.0 };
        centre + spread * rng.random_range(-1.0..1.0)
    });
    (x, y)
}

/// Exhaustive single-tree reference: at every node tries every feature and
/// every midpoint, weighted Gini, ties to the lower feature then the lower
/// threshold. Splits even at zero gain. Returns the normalized leaf
/// histogram reached by `query`.
pub fn reference_tree_leaf(
    x: ArrayView2<'_, f64>,
    class: &[usize],
    weight: &[f64],
    query: &[f64],
) -> [f64; 3] {
    let mut rows: Vec<usize> = (0..x.nrows()).collect();
    loop {
        let mut hist = [0.0; 3];
        for &r in &rows {
            hist[class[r]] += weight[r];
        }
        let total: f64 = hist.iter().sum();
        let leaf = hist.map(|v| v / total);
        if hist.iter().filter(|&&v| v > 0.0).count() <= 1 || rows.len() < 2 {
            return leaf;
        }
        let impurity = |h: &[f64; 3]| {
            let s: f64 = h.iter().sum();
            if s <= 0.0 {
                0.0
            } else {
                1.0 - h.iter().map(|v| (v / s).powi(2)).sum::<f64>()
            }
        };
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..x.ncols() {
            let mut values: Vec<f64> = rows.iter().map(|&r| x[[r, f]]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let thr = w[0] + (w[1] - w[0]) / 2.0;
                let (mut l, mut r) = ([0.0; 3], [0.0; 3]);
                for &row in &rows {
                    let h = if x[[row, f]] <= thr { &mut l } else { &mut r };
                    h[class[row]] += weight[row];
                }
                let (lw, rw) = (l.iter().sum::<f64>(), r.iter().sum::<f64>());
                let gain = impurity(&hist) - (lw * impurity(&l) + rw * impurity(&r)) / total;
                let better = match best {
                    None => true,
                    Some((g, bf, bt)) => {
                        gain > g + 1e-12
                            || ((gain - g).abs() <= 1e-12 && (f < bf || (f == bf && thr < bt)))
                    }
                };
                if better {
                    best = Some((gain, f, thr));
                }
            }
        }
        let Some((_, f, thr)) = best else {
            return leaf;
        };
        let go_left = query[f] <= thr;
        rows.retain(|&r| (x[[r, f]] <= thr) == go_left);
    }
}

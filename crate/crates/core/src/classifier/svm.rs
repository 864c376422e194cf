//! RBF-kernel support vector classifier: one-vs-one binary machines, each
//! solved with sequential minimal optimization.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::kernel::{
    gamma_scale_rows, KernelData, RowCache, DEFAULT_CACHE_BYTES, DEFAULT_PRECOMPUTE_BYTES,
};
use crate::error::{Error, Result};
use crate::frames::ActionLabel;
use crate::windows::balanced_class_weights;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gamma {
    /// `1 / (d · Var(X))`, resolved at fit time.
    Scale,
    #[serde(untagged)]
    Value(f64),
}

impl std::fmt::Display for Gamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Gamma::Scale => f.write_str("scale"),
            Gamma::Value(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for Gamma {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "scale" {
            return Ok(Gamma::Scale);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("bad gamma {s:?}")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {v}")));
        }
        Ok(Gamma::Value(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    Balanced,
    Uniform,
}

impl std::fmt::Display for ClassWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassWeight::Balanced => "balanced",
            ClassWeight::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for ClassWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(ClassWeight::Balanced),
            "uniform" | "none" => Ok(ClassWeight::Uniform),
            other => Err(Error::Config(format!(
                "unknown class weight mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: Gamma,
    pub class_weight: ClassWeight,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
    pub cache_bytes: usize,
    pub precompute_bytes: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            gamma: Gamma::Scale,
            class_weight: ClassWeight::Balanced,
            tol: 1e-3,
            max_iter: 10_000_000,
            cache_bytes: DEFAULT_CACHE_BYTES,
            precompute_bytes: DEFAULT_PRECOMPUTE_BYTES,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// A binary dual problem over a subset of training rows:
/// `min ½ αᵀQα − Σα` s.t. `0 ≤ α_i ≤ cap_i`, `Σ y_i α_i = 0`, `Q_ij = y_i y_j K_ij`.
pub struct BinaryProblem<'d, 'a> {
    pub data: &'d KernelData<'a>,
    /// Global row indices of the members.
    pub members: Vec<usize>,
    /// ±1 per member.
    pub y: Vec<f64>,
    /// Upper bound of each dual variable.
    pub cap: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ α_i y_i K(x_i, x) − rho`.
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
}

impl BinaryProblem<'_, '_> {
    fn in_up(&self, t: usize, alpha: &[f64]) -> bool {
        if self.y[t] > 0.0 {
            alpha[t] < self.cap[t]
        } else {
            alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize, alpha: &[f64]) -> bool {
        if self.y[t] > 0.0 {
            alpha[t] > 0.0
        } else {
            alpha[t] < self.cap[t]
        }
    }

    /// Solves the dual with maximal-violating-pair SMO using second-order
    /// working-set selection. Stops once the KKT gap is below `tol`.
    pub fn solve(&self, tol: f64, max_iter: usize, cache_bytes: usize) -> Result<BinarySolution> {
        let n = self.members.len();
        let mut cache = RowCache::new(self.data, &self.members, self.gamma, cache_bytes);
        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let mut iterations = 0;
        loop {
            // i: maximal -y G over I_up
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..n {
                if self.in_up(t, &alpha) {
                    let v = -self.y[t] * grad[t];
                    if v > gmax {
                        gmax = v;
                        i = t;
                    }
                }
            }
            let mut gmin = f64::INFINITY;
            let mut j = usize::MAX;
            if i != usize::MAX {
                let ki = cache.get(i).to_vec();
                let mut best = f64::INFINITY;
                for t in 0..n {
                    if !self.in_low(t, &alpha) {
                        continue;
                    }
                    let v = -self.y[t] * grad[t];
                    gmin = gmin.min(v);
                    let b = gmax - v;
                    if b > 0.0 {
                        // K_ii = K_tt = 1 for the RBF kernel
                        let a = (2.0 - 2.0 * ki[t]).max(TAU);
                        let score = -(b * b) / a;
                        if score <= best {
                            best = score;
                            j = t;
                        }
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
                break;
            }
            if iterations >= max_iter {
                log::warn!(
                    "SMO stopped at max_iter = {max_iter} with gap {}",
                    gmax - gmin
                );
                break;
            }
            iterations += 1;

            let ki = cache.get(i).to_vec();
            let kj = cache.get(j).to_vec();
            let (yi, yj) = (self.y[i], self.y[j]);
            let (ci, cj) = (self.cap[i], self.cap[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let quad = (2.0 - 2.0 * ki[j]).max(TAU);
            if yi != yj {
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > ci - cj {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = ci - diff;
                    }
                } else if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = cj + diff;
                }
            } else {
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > ci {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = sum - ci;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > cj {
                    if alpha[j] > cj {
                        alpha[j] = cj;
                        alpha[i] = sum - cj;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let di = alpha[i] - old_i;
            let dj = alpha[j] - old_j;
            for t in 0..n {
                // Q_ti = y_t y_i K_ti
                grad[t] += self.y[t] * (yi * ki[t] * di + yj * kj[t] * dj);
            }
        }

        let rho = self.rho(&alpha, &grad);
        let objective = alpha
            .iter()
            .zip(&grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>()
            / 2.0;
        Ok(BinarySolution {
            alpha,
            rho,
            objective,
            iterations,
        })
    }

    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..alpha.len() {
            let yg = self.y[t] * grad[t];
            if alpha[t] >= self.cap[t] {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                sum_free += yg;
                n_free += 1;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }

    /// Dual objective `½ αᵀQα − Σα`, evaluated from scratch.
    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let n = self.members.len();
        let mut row = vec![0.0; n];
        let mut quad = 0.0;
        for i in 0..n {
            if alpha[i] == 0.0 {
                continue;
            }
            self.data
                .row(self.members[i], &self.members, self.gamma, &mut row);
            for j in 0..n {
                quad += alpha[i] * alpha[j] * self.y[i] * self.y[j] * row[j];
            }
        }
        0.5 * quad - alpha.iter().sum::<f64>()
    }

    /// Per-member KKT violation of `(alpha, rho)`, evaluated from scratch.
    pub fn kkt_residuals(&self, alpha: &[f64], rho: f64) -> Vec<f64> {
        let n = self.members.len();
        let mut row = vec![0.0; n];
        (0..n)
            .map(|t| {
                self.data
                    .row(self.members[t], &self.members, self.gamma, &mut row);
                let f: f64 = (0..n).map(|k| alpha[k] * self.y[k] * row[k]).sum::<f64>() - rho;
                let margin = self.y[t] * f - 1.0;
                if alpha[t] <= 0.0 {
                    (-margin).max(0.0)
                } else if alpha[t] >= self.cap[t] {
                    margin.max(0.0)
                } else {
                    margin.abs()
                }
            })
            .collect()
    }
}

/// One trained pairwise machine. Positive decisions vote for `pos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub pos: ActionLabel,
    pub neg: ActionLabel,
    /// Indices into the model's support-vector pool.
    pub sv: Vec<usize>,
    /// `α_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Classes seen in training, in label order.
    pub classes: Vec<ActionLabel>,
    pub gamma: f64,
    pub c: f64,
    /// Per-class box scaling in label order (0 for absent classes).
    pub class_weights: [f64; ActionLabel::COUNT],
    pub support_vectors: Array2<f64>,
    pub pairs: Vec<PairMachine>,
    sv_sq_norms: Vec<f64>,
}

/// Result of a one-vs-one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmPrediction {
    pub label: ActionLabel,
    /// Votes per label, in label order.
    pub votes: [u32; ActionLabel::COUNT],
    /// Signed decision value of every pair machine, in model pair order.
    pub margins: Vec<(ActionLabel, ActionLabel, f64)>,
}

/// Majority vote; ties go to the larger summed absolute margin of won
/// contests, then to label order (listen, speak, wait).
pub fn aggregate_pairwise(
    margins: &[(ActionLabel, ActionLabel, f64)],
) -> (ActionLabel, [u32; ActionLabel::COUNT]) {
    let mut votes = [0u32; ActionLabel::COUNT];
    let mut strength = [0.0f64; ActionLabel::COUNT];
    for &(pos, neg, f) in margins {
        let winner = if f >= 0.0 { pos } else { neg };
        votes[winner.index()] += 1;
        strength[winner.index()] += f.abs();
    }
    let mut best = 0;
    for k in 1..ActionLabel::COUNT {
        let better =
            votes[k] > votes[best] || (votes[k] == votes[best] && strength[k] > strength[best]);
        if better {
            best = k;
        }
    }
    (ActionLabel::ALL[best], votes)
}

impl SvmModel {
    pub fn new(
        classes: Vec<ActionLabel>,
        gamma: f64,
        c: f64,
        class_weights: [f64; ActionLabel::COUNT],
        support_vectors: Array2<f64>,
        pairs: Vec<PairMachine>,
    ) -> Result<Self> {
        for p in &pairs {
            if p.sv.len() != p.coef.len() || p.sv.iter().any(|&k| k >= support_vectors.nrows()) {
                return Err(Error::Container(format!(
                    "pair {}/{} references missing support vectors",
                    p.pos, p.neg
                )));
            }
        }
        let sv_sq_norms = support_vectors
            .rows()
            .into_iter()
            .map(|r| r.dot(&r))
            .collect();
        Ok(SvmModel {
            classes,
            gamma,
            c,
            class_weights,
            support_vectors,
            pairs,
            sv_sq_norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.support_vectors.nrows()
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    fn decide(&self, kernel: ArrayView1<'_, f64>) -> SvmPrediction {
        let margins: Vec<_> = self
            .pairs
            .iter()
            .map(|p| {
                let f =
                    p.sv.iter()
                        .zip(&p.coef)
                        .map(|(&k, &c)| c * kernel[k])
                        .sum::<f64>()
                        - p.rho;
                (p.pos, p.neg, f)
            })
            .collect();
        let (label, votes) = match self.classes.as_slice() {
            [only] => {
                let mut votes = [0; ActionLabel::COUNT];
                votes[only.index()] = 1;
                (*only, votes)
            }
            _ => aggregate_pairwise(&margins),
        };
        SvmPrediction {
            label,
            votes,
            margins,
        }
    }

    fn kernel_block(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut k = rows.dot(&self.support_vectors.t());
        for (mut krow, x) in k.rows_mut().into_iter().zip(rows.rows()) {
            let nx = x.dot(&x);
            for (v, ns) in krow.iter_mut().zip(&self.sv_sq_norms) {
                *v = (-self.gamma * (nx + ns - 2.0 * *v).max(0.0)).exp();
            }
        }
        k
    }

    pub fn predict(&self, x: &[f64]) -> Result<SvmPrediction> {
        self.check_dim(x.len())?;
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let k = self.kernel_block(xv);
        Ok(self.decide(k.row(0)))
    }

    pub fn predict_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<SvmPrediction>> {
        self.check_dim(rows.ncols())?;
        let k = self.kernel_block(rows);
        Ok(k.rows().into_iter().map(|r| self.decide(r)).collect())
    }
}

fn check_training_input(x: ArrayView2<'_, f64>, y: &[ActionLabel]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features"));
    }
    Ok(())
}

/// Per-label weights for the given training rows.
pub fn class_weight_vector(
    y: &[ActionLabel],
    rows: &[usize],
    mode: ClassWeight,
) -> Result<[f64; ActionLabel::COUNT]> {
    let mut counts = [0usize; ActionLabel::COUNT];
    for &i in rows {
        counts[y[i].index()] += 1;
    }
    let present: Vec<usize> = (0..ActionLabel::COUNT).filter(|&k| counts[k] > 0).collect();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut w = [0.0; ActionLabel::COUNT];
    match mode {
        ClassWeight::Uniform => present.iter().for_each(|&k| w[k] = 1.0),
        ClassWeight::Balanced => {
            let bw =
                balanced_class_weights(&present.iter().map(|&k| counts[k]).collect::<Vec<_>>())?;
            for (&k, v) in present.iter().zip(bw) {
                w[k] = v;
            }
        }
    }
    Ok(w)
}

/// Per-pair training diagnostics.
#[derive(Debug, Clone)]
pub struct PairReport {
    pub pos: ActionLabel,
    pub neg: ActionLabel,
    pub iterations: usize,
    pub objective: f64,
    /// Recomputed from scratch when the distance matrix is precomputed.
    pub max_kkt_residual: Option<f64>,
}

/// Trains on the rows `rows` of `data` (labels indexed globally).
pub fn train_svm_on(
    data: &KernelData<'_>,
    y: &[ActionLabel],
    rows: &[usize],
    params: &SvmParams,
) -> Result<(SvmModel, Vec<PairReport>)> {
    params.validate()?;
    let weights = class_weight_vector(y, rows, params.class_weight)?;
    let gamma = match params.gamma {
        Gamma::Scale => gamma_scale_rows(data.x(), Some(rows))?,
        Gamma::Value(g) => g,
    };
    let classes: Vec<ActionLabel> = ActionLabel::ALL
        .into_iter()
        .filter(|l| weights[l.index()] > 0.0)
        .collect();

    let mut raw_pairs = Vec::new();
    let mut reports = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            let members: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&i| y[i] == pos || y[i] == neg)
                .collect();
            let ys: Vec<f64> = members
                .iter()
                .map(|&i| if y[i] == pos { 1.0 } else { -1.0 })
                .collect();
            let cap: Vec<f64> = members
                .iter()
                .map(|&i| params.c * weights[y[i].index()])
                .collect();
            let problem = BinaryProblem {
                data,
                members,
                y: ys,
                cap,
                gamma,
            };
            let sol = problem.solve(params.tol, params.max_iter, params.cache_bytes)?;
            log::debug!(
                "pair {pos}/{neg}: {} iterations, objective {:.6}",
                sol.iterations,
                sol.objective
            );
            reports.push(PairReport {
                pos,
                neg,
                iterations: sol.iterations,
                objective: sol.objective,
                max_kkt_residual: data.is_precomputed().then(|| {
                    problem
                        .kkt_residuals(&sol.alpha, sol.rho)
                        .into_iter()
                        .fold(0.0, f64::max)
                }),
            });
            raw_pairs.push((pos, neg, problem, sol));
        }
    }

    // Pool every row that is a support vector of some pair.
    let mut pool: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, _, problem, sol) in &raw_pairs {
        for (k, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                pool.insert(problem.members[k], 0);
            }
        }
    }
    for (slot, v) in pool.values_mut().enumerate() {
        *v = slot;
    }
    let x = data.x();
    let mut sv = Array2::zeros((pool.len(), x.ncols()));
    for (&g, &slot) in &pool {
        sv.row_mut(slot).assign(&x.row(g));
    }
    let pairs = raw_pairs
        .iter()
        .map(|(pos, neg, problem, sol)| {
            let (idx, coef): (Vec<usize>, Vec<f64>) = sol
                .alpha
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0.0)
                .map(|(k, &a)| (pool[&problem.members[k]], a * problem.y[k]))
                .unzip();
            PairMachine {
                pos: *pos,
                neg: *neg,
                sv: idx,
                coef,
                rho: sol.rho,
            }
        })
        .collect();
    let model = SvmModel::new(classes, gamma, params.c, weights, sv, pairs)?;
    Ok((model, reports))
}

/// One-vs-one RBF SVM on all rows of `x`.
pub fn train_svm(
    x: ArrayView2<'_, f64>,
    y: &[ActionLabel],
    params: &SvmParams,
) -> Result<SvmModel> {
    check_training_input(x, y)?;
    let data = KernelData::new(x, params.precompute_bytes);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    Ok(train_svm_on(&data, y, &rows, params)?.0)
}

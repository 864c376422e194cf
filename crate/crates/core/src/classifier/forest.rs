//! Random forest of Gini decision trees with class-weighted impurity.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{class_weight_vector, ClassWeight};
use crate::error::{Error, Result};
use crate::frames::ActionLabel;

const K: usize = ActionLabel::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
    #[serde(untagged)]
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::All => d,
            MaxFeatures::Count(m) => m,
        };
        m.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub class_weight: ClassWeight,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            class_weight: ClassWeight::Balanced,
            seed: 0,
        }
    }
}

/// Flat binary tree. Node 0 is the root; leaves have `feature == None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub feature: Vec<Option<usize>>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Normalized weighted class histogram per node, in label order.
    pub value: Vec<[f64; K]>,
}

impl Tree {
    fn push(&mut self, value: [f64; K]) -> usize {
        self.feature.push(None);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|f| f.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, n: usize) -> usize {
            match t.feature[n] {
                None => 0,
                Some(_) => 1 + walk(t, t.left[n]).max(walk(t, t.right[n])),
            }
        }
        walk(self, 0)
    }

    /// Leaf histogram reached by `x`. Goes left when `x[f] <= threshold`.
    pub fn leaf_value(&self, x: &[f64]) -> &[f64; K] {
        let mut n = 0;
        while let Some(f) = self.feature[n] {
            n = if x[f] <= self.threshold[n] {
                self.left[n]
            } else {
                self.right[n]
            };
        }
        &self.value[n]
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let n = self.n_nodes();
        if n == 0
            || [
                self.threshold.len(),
                self.left.len(),
                self.right.len(),
                self.value.len(),
            ] != [n; 4]
        {
            return Err(Error::Container(
                "tree arrays have inconsistent lengths".into(),
            ));
        }
        for i in 0..n {
            if let Some(f) = self.feature[i] {
                if f >= dim
                    || self.left[i] <= i
                    || self.right[i] <= i
                    || self.left[i] >= n
                    || self.right[i] >= n
                {
                    return Err(Error::Container(format!("tree node {i} is malformed")));
                }
            }
            if self.value[i].iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Container(format!(
                    "tree node {i} has a negative histogram"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub dim: usize,
    pub params: ForestParams,
    pub class_weights: [f64; K],
    pub trees: Vec<Tree>,
}

/// Gains closer than this are ties. The right-hand histogram is formed by
/// subtraction, so equal splits can differ in the last bits.
const GAIN_TIE: f64 = 1e-12;

fn gini(h: &[f64; K], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - h.iter().map(|v| (v / total) * (v / total)).sum::<f64>()
}

fn normalized(h: [f64; K]) -> [f64; K] {
    let s: f64 = h.iter().sum();
    if s > 0.0 {
        h.map(|v| v / s)
    } else {
        h
    }
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    class: Vec<usize>,
    weight: Vec<f64>,
    max_features: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Grower<'_> {
    fn histogram(&self, rows: &[usize]) -> [f64; K] {
        let mut h = [0.0; K];
        for &r in rows {
            h[self.class[r]] += self.weight[r];
        }
        h
    }

    fn best_for_feature(
        &self,
        rows: &[usize],
        f: usize,
        parent: &[f64; K],
        total: f64,
    ) -> Option<(f64, f64)> {
        let mut sorted: Vec<(f64, usize)> = rows.iter().map(|&r| (self.x[[r, f]], r)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted[0].0 == sorted[sorted.len() - 1].0 {
            return None;
        }
        let parent_imp = gini(parent, total);
        let mut left = [0.0; K];
        let mut best: Option<(f64, f64)> = None;
        for k in 0..sorted.len() - 1 {
            let (v, r) = sorted[k];
            left[self.class[r]] += self.weight[r];
            let next = sorted[k + 1].0;
            if next == v {
                continue;
            }
            let lw: f64 = left.iter().sum();
            let mut right = *parent;
            for c in 0..K {
                right[c] -= left[c];
            }
            let rw = total - lw;
            let gain = parent_imp - (lw * gini(&left, lw) + rw * gini(&right, rw)) / total;
            let mut threshold = v + (next - v) / 2.0;
            if threshold >= next {
                threshold = v;
            }
            if best.is_none_or(|(g, _)| gain > g + GAIN_TIE) {
                best = Some((gain, threshold));
            }
        }
        best
    }

    fn find_split(
        &self,
        rows: &[usize],
        hist: &[f64; K],
        rng: &mut ChaCha8Rng,
    ) -> Option<BestSplit> {
        let total: f64 = hist.iter().sum();
        let mut order: Vec<usize> = (0..self.x.ncols()).collect();
        order.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut visited = 0;
        for f in order {
            // Constant features do not count toward the budget.
            if visited >= self.max_features && best.is_some() {
                break;
            }
            let Some((gain, thr)) = self.best_for_feature(rows, f, hist, total) else {
                continue;
            };
            visited += 1;
            let better = match best {
                None => true,
                Some((g, bf, bt)) => {
                    gain > g + GAIN_TIE
                        || ((gain - g).abs() <= GAIN_TIE && (f < bf || (f == bf && thr < bt)))
                }
            };
            if better {
                best = Some((gain, f, thr));
            }
        }
        let (gain, feature, threshold) = best?;
        let (left, right) = rows
            .iter()
            .partition(|&&r| self.x[[r, feature]] <= threshold);
        Some(BestSplit {
            feature,
            threshold,
            gain,
            left,
            right,
        })
    }

    fn grow(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut tree = Tree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
        };
        let root_hist = self.histogram(&rows);
        tree.push(normalized(root_hist));
        let mut stack = vec![(0usize, rows, root_hist)];
        while let Some((node, rows, hist)) = stack.pop() {
            let pure = hist.iter().filter(|&&v| v > 0.0).count() <= 1;
            if pure || rows.len() < 2 {
                continue;
            }
            let Some(split) = self.find_split(&rows, &hist, rng) else {
                continue;
            };
            log::trace!(
                "node {node}: feature {} gain {:.4}",
                split.feature,
                split.gain
            );
            let lh = self.histogram(&split.left);
            let rh = self.histogram(&split.right);
            let l = tree.push(normalized(lh));
            let r = tree.push(normalized(rh));
            tree.feature[node] = Some(split.feature);
            tree.threshold[node] = split.threshold;
            tree.left[node] = l;
            tree.right[node] = r;
            stack.push((r, split.right, rh));
            stack.push((l, split.left, lh));
        }
        tree
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Trains a forest; each tree draws from its own seeded stream, so the
/// result does not depend on thread scheduling.
pub fn train_forest(
    x: ArrayView2<'_, f64>,
    y: &[ActionLabel],
    params: &ForestParams,
) -> Result<ForestModel> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if params.n_estimators == 0 {
        return Err(Error::Config("n_estimators must be >= 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features"));
    }
    let all: Vec<usize> = (0..y.len()).collect();
    let class_weights = class_weight_vector(y, &all, params.class_weight)?;
    let n = y.len();
    let class: Vec<usize> = y.iter().map(|l| l.index()).collect();
    let max_features = params.max_features.resolve(x.ncols());

    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let mut counts = vec![0usize; n];
            if params.bootstrap {
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
            } else {
                counts.iter_mut().for_each(|c| *c = 1);
            }
            let weight = (0..n)
                .map(|i| counts[i] as f64 * class_weights[class[i]])
                .collect();
            let rows = (0..n).filter(|&i| counts[i] > 0).collect();
            let grower = Grower {
                x,
                class: class.clone(),
                weight,
                max_features,
            };
            grower.grow(rows, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        dim: x.ncols(),
        params: params.clone(),
        class_weights,
        trees,
    })
}

impl ForestModel {
    /// Mean of the per-tree leaf distributions, in label order.
    pub fn proba(&self, x: &[f64]) -> Result<[f64; K]> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut acc = [0.0; K];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.leaf_value(x)) {
                *a += v;
            }
        }
        Ok(acc.map(|v| v / self.trees.len() as f64))
    }

    /// Highest mean probability; ties go to label order.
    pub fn predict(&self, x: &[f64]) -> Result<ActionLabel> {
        let p = self.proba(x)?;
        let mut best = 0;
        for k in 1..K {
            if p[k] > p[best] {
                best = k;
            }
        }
        Ok(ActionLabel::ALL[best])
    }
}

pub fn predict_forest(model: &ForestModel, x: &[f64]) -> Result<ActionLabel> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use ActionLabel::*;

    #[test]
    fn xor_is_learned() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = [Speak, Listen, Listen, Speak];
        let f = train_forest(x.view(), &y, &ForestParams::default()).unwrap();
        assert_eq!(f.trees.len(), 100);
        for (row, &label) in x.rows().into_iter().zip(&y) {
            assert_eq!(f.predict(row.as_slice().unwrap()).unwrap(), label);
        }
    }

    #[test]
    fn inseparable_points_make_leaves() {
        // identical features: no split exists, so every tree is one leaf
        let x = array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]];
        let y = [Wait, Wait, Speak];
        let params = ForestParams {
            class_weight: ClassWeight::Uniform,
            bootstrap: false,
            ..ForestParams::default()
        };
        let f = train_forest(x.view(), &y, &params).unwrap();
        assert!(f.trees.iter().all(|t| t.n_nodes() == 1));
        assert_eq!(f.predict(&[0.1, 0.9]).unwrap(), Wait);
    }

    #[test]
    fn single_class_rejected() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            train_forest(x.view(), &[Wait, Wait], &ForestParams::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn seed_determines_forest() {
        let x = ndarray::Array2::from_shape_fn((30, 5), |(i, j)| ((i * 31 + j * 17) % 23) as f64);
        let y: Vec<_> = (0..30).map(|i| ActionLabel::ALL[i % 3]).collect();
        let p = ForestParams {
            n_estimators: 10,
            ..ForestParams::default()
        };
        let a = train_forest(x.view(), &y, &p).unwrap();
        let b = train_forest(x.view(), &y, &p).unwrap();
        assert_eq!(a, b);
        for t in &a.trees {
            t.check(5).unwrap();
        }
    }
}

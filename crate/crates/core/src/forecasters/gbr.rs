//! Gradient-boosted regression trees with least-squares or pinball loss.
//!
//! Trees are grown level by level with exact greedy variance-reduction splits
//! at midpoints between consecutive distinct feature values. Feature orderings
//! are computed once per training set and shared across all stages (and across
//! quantile levels, see [`TreeData`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const DEFAULT_N_ESTIMATORS: usize = 300;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const MIN_SAMPLES_LEAF: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    LeastSquares,
    Pinball { tau: f64 },
}

impl Loss {
    pub fn value(&self, y: f64, pred: f64) -> f64 {
        match *self {
            Loss::LeastSquares => (y - pred) * (y - pred),
            Loss::Pinball { tau } => pinball(y - pred, tau),
        }
    }
}

/// Quantile loss `u * (tau - 1{u < 0})`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Lower empirical quantile `inf{x : F_n(x) >= tau}`, a pinball-loss minimizer.
pub fn empirical_quantile(values: &mut [f64], tau: f64) -> f64 {
    let n = values.len();
    let k = ((tau * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbrParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub loss: Loss,
}

impl GbrParams {
    pub fn new(max_depth: usize, loss: Loss) -> Self {
        Self {
            n_estimators: DEFAULT_N_ESTIMATORS,
            learning_rate: DEFAULT_LEARNING_RATE,
            max_depth,
            loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left).max(walk(nodes, right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTreesModel {
    pub column_names: Vec<String>,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub base_prediction: f64,
    pub loss: Loss,
    /// Mean training loss after each stage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_loss: Vec<f64>,
}

impl BoostedTreesModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_prediction
            + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.column_names.len() {
            return Err(Error::ColumnMismatch {
                expected: self.column_names.clone(),
                actual: x.column_names.clone(),
            });
        }
        Ok((0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect())
    }
}

/// Column-major training features with per-feature sort orders.
#[derive(Debug, Clone)]
pub struct TreeData {
    column_names: Vec<String>,
    n: usize,
    cols: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
    /// Column values in sorted order.
    sorted_values: Vec<Vec<f64>>,
}

impl TreeData {
    pub fn new(x: &FeatureMatrix) -> Result<Self> {
        x.check_finite()?;
        let n = x.n_rows();
        let cols: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.column(j)).collect();
        let sorted = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]));
                idx
            })
            .collect();
        let sorted_values = cols
            .iter()
            .zip(&sorted)
            .map(|(c, idx): (&Vec<f64>, &Vec<u32>)| idx.iter().map(|&i| c[i as usize]).collect())
            .collect();
        Ok(Self {
            column_names: x.column_names.clone(),
            n,
            cols,
            sorted,
            sorted_values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }
}

pub fn fit_gbr(x: &FeatureMatrix, max_depth: usize, loss: Loss) -> Result<BoostedTreesModel> {
    if !x.has_target() {
        return Err(Error::InvalidInput("boosting needs a target".into()));
    }
    let data = TreeData::new(x)?;
    fit_gbr_prepared(&data, &x.target, &GbrParams::new(max_depth, loss)).map(|(m, _)| m)
}

/// Fits on prepared data; also returns the in-sample predictions.
pub fn fit_gbr_prepared(
    data: &TreeData,
    y: &[f64],
    params: &GbrParams,
) -> Result<(BoostedTreesModel, Vec<f64>)> {
    let n = data.n;
    if n < 4 {
        return Err(Error::InsufficientData {
            required: 4,
            actual: n,
        });
    }
    if y.len() != n {
        return Err(Error::InvalidInput("target length mismatch".into()));
    }
    if params.max_depth == 0 || params.max_depth > 16 {
        return Err(Error::InvalidInput(format!(
            "max_depth must be in 1..=16, got {}",
            params.max_depth
        )));
    }
    if let Loss::Pinball { tau } = params.loss {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must be in (0,1), got {tau}")));
        }
    }

    let base = match params.loss {
        Loss::LeastSquares => y.iter().sum::<f64>() / n as f64,
        Loss::Pinball { tau } => empirical_quantile(&mut y.to_vec(), tau),
    };
    let mut pred = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut train_loss = Vec::with_capacity(params.n_estimators);
    let mut builder = TreeBuilder::new(n);
    for _ in 0..params.n_estimators {
        match params.loss {
            Loss::LeastSquares => {
                for i in 0..n {
                    grad[i] = y[i] - pred[i];
                }
            }
            Loss::Pinball { tau } => {
                for i in 0..n {
                    grad[i] = if y[i] < pred[i] { tau - 1.0 } else { tau };
                }
            }
        }
        let tree = builder.build(data, &grad, params.max_depth, |members| match params.loss {
            Loss::LeastSquares => {
                members.iter().map(|&i| grad[i as usize]).sum::<f64>() / members.len() as f64
            }
            Loss::Pinball { tau } => {
                let mut r: Vec<f64> = members
                    .iter()
                    .map(|&i| y[i as usize] - pred[i as usize])
                    .collect();
                empirical_quantile(&mut r, tau)
            }
        });
        for (p, &node) in pred.iter_mut().zip(&builder.node_of) {
            if let TreeNode::Leaf { value } = tree.nodes[node as usize] {
                *p += params.learning_rate * value;
            }
        }
        train_loss.push(
            y.iter()
                .zip(&pred)
                .map(|(&a, &b)| params.loss.value(a, b))
                .sum::<f64>()
                / n as f64,
        );
        trees.push(tree);
    }

    Ok((
        BoostedTreesModel {
            column_names: data.column_names.clone(),
            trees,
            learning_rate: params.learning_rate,
            n_estimators: params.n_estimators,
            max_depth: params.max_depth,
            base_prediction: base,
            loss: params.loss,
            train_loss,
        },
        pred,
    ))
}

pub fn predict_gbr(model: &BoostedTreesModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict(x)
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    sum: f64,
    sumsq: f64,
    count: usize,
}

#[derive(Debug, Clone, Copy)]
struct Scan {
    left_sum: f64,
    left_count: usize,
    last_x: f64,
    best_gain: f64,
    best_feature: usize,
    best_threshold: f64,
}

struct TreeBuilder {
    node_of: Vec<u32>,
}

const NO_SLOT: u32 = u32::MAX;

impl TreeBuilder {
    fn new(n: usize) -> Self {
        Self {
            node_of: vec![0; n],
        }
    }

    fn build(
        &mut self,
        data: &TreeData,
        target: &[f64],
        max_depth: usize,
        mut leaf_value: impl FnMut(&[u32]) -> f64,
    ) -> RegressionTree {
        let n = data.n;
        self.node_of.iter_mut().for_each(|v| *v = 0);
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        let root = target.iter().fold(NodeStats::default(), |s, &g| NodeStats {
            sum: s.sum + g,
            sumsq: s.sumsq + g * g,
            count: s.count + 1,
        });
        // frontier: (node id, stats)
        let mut frontier = vec![(0usize, root)];

        for _ in 0..max_depth {
            if frontier.is_empty() {
                break;
            }
            let mut slot_of = vec![NO_SLOT; nodes.len()];
            for (s, (id, _)) in frontier.iter().enumerate() {
                slot_of[*id] = s as u32;
            }
            // frontier slot and gradient per row, skipping nodes too small to split
            let packed: Vec<(u32, f64)> = (0..n)
                .map(|i| {
                    let slot = slot_of[self.node_of[i] as usize];
                    if slot != NO_SLOT && frontier[slot as usize].1.count < 2 * MIN_SAMPLES_LEAF {
                        (NO_SLOT, 0.0)
                    } else {
                        (slot, target[i])
                    }
                })
                .collect();
            let mut best: Vec<(f64, usize, f64)> = vec![(0.0, 0, 0.0); frontier.len()];
            let mut scans = vec![
                Scan {
                    left_sum: 0.0,
                    left_count: 0,
                    last_x: f64::NEG_INFINITY,
                    best_gain: 0.0,
                    best_feature: 0,
                    best_threshold: 0.0,
                };
                frontier.len()
            ];
            for (f, order) in data.sorted.iter().enumerate() {
                let xs = &data.sorted_values[f];
                for s in scans.iter_mut() {
                    s.left_sum = 0.0;
                    s.left_count = 0;
                    s.last_x = f64::NEG_INFINITY;
                }
                for (&i, &x) in order.iter().zip(xs) {
                    let (slot, g) = packed[i as usize];
                    if slot == NO_SLOT {
                        continue;
                    }
                    let slot = slot as usize;
                    let st = &mut scans[slot];
                    let total = &frontier[slot].1;
                    if x > st.last_x
                        && st.left_count >= MIN_SAMPLES_LEAF
                        && total.count - st.left_count >= MIN_SAMPLES_LEAF
                    {
                        let rs = total.sum - st.left_sum;
                        let rc = (total.count - st.left_count) as f64;
                        let gain = st.left_sum * st.left_sum / st.left_count as f64 + rs * rs / rc
                            - total.sum * total.sum / total.count as f64;
                        if gain > st.best_gain {
                            let mut thr = 0.5 * (st.last_x + x);
                            if thr >= x {
                                thr = st.last_x;
                            }
                            st.best_gain = gain;
                            st.best_feature = f;
                            st.best_threshold = thr;
                        }
                    }
                    st.left_sum += g;
                    st.left_count += 1;
                    st.last_x = x;
                }
            }
            for (s, st) in scans.iter().enumerate() {
                best[s] = (st.best_gain, st.best_feature, st.best_threshold);
            }

            // apply splits
            let mut children = vec![None; frontier.len()];
            for (s, &(id, stats)) in frontier.iter().enumerate() {
                let (gain, feature, threshold) = best[s];
                let centered = stats.sumsq - stats.sum * stats.sum / stats.count as f64;
                if gain > 1e-12 * centered.max(1e-300) && gain > 0.0 {
                    let left = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes[id] = TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right: left + 1,
                    };
                    children[s] = Some((left, feature, threshold));
                }
            }
            let mut child_stats = vec![NodeStats::default(); nodes.len()];
            for i in 0..n {
                let node = self.node_of[i] as usize;
                let slot = slot_of.get(node).copied().unwrap_or(NO_SLOT);
                if slot == NO_SLOT {
                    continue;
                }
                if let Some((left, feature, threshold)) = children[slot as usize] {
                    let child = if data.cols[feature][i] <= threshold {
                        left
                    } else {
                        left + 1
                    };
                    self.node_of[i] = child as u32;
                    let g = target[i];
                    let cs = &mut child_stats[child];
                    cs.sum += g;
                    cs.sumsq += g * g;
                    cs.count += 1;
                }
            }
            frontier = children
                .iter()
                .flatten()
                .flat_map(|&(left, _, _)| [left, left + 1])
                .map(|c| (c, child_stats[c]))
                .collect();
        }

        // leaf values
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); nodes.len()];
        for (i, &node) in self.node_of.iter().enumerate() {
            members[node as usize].push(i as u32);
        }
        for (id, m) in members.iter().enumerate() {
            if let TreeNode::Leaf { value } = &mut nodes[id] {
                if !m.is_empty() {
                    *value = leaf_value(m);
                }
            }
        }
        RegressionTree { nodes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(xs: &[Vec<f64>], y: Vec<f64>) -> FeatureMatrix {
        let names = (0..xs[0].len()).map(|j| format!("x{j}")).collect();
        FeatureMatrix::from_rows(names, xs, y).unwrap()
    }

    #[test]
    fn constant_target_gives_constant_prediction() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let x = matrix(&xs, vec![7.0; 30]);
        let m = fit_gbr(&x, 3, Loss::LeastSquares).unwrap();
        assert_eq!(m.trees.len(), 300);
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        for p in m.predict(&x).unwrap() {
            assert_eq!(p, 7.0);
        }
    }

    #[test]
    fn loss_nonincreasing_and_depth_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|r| (6.0 * r[0]).sin() + r[1] * r[1] + rng.random_range(-0.1..0.1))
            .collect();
        let x = matrix(&xs, y);
        for depth in 3..=6 {
            let m = fit_gbr(&x, depth, Loss::LeastSquares).unwrap();
            assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(m.trees.iter().all(|t| t.depth() <= depth));
        }
    }

    #[test]
    fn step_function_is_learned() {
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let y: Vec<f64> = xs.iter().map(|r| if r[0] < 0.37 { 0.0 } else { 10.0 }).collect();
        let x = matrix(&xs, y.clone());
        let m = fit_gbr(&x, 3, Loss::LeastSquares).unwrap();
        let p = m.predict(&x).unwrap();
        let rmse = (p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(rmse < 0.5, "rmse {rmse}");
    }

    #[test]
    fn predictions_match_training_trace() {
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, i as f64]).collect();
        let y: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        let x = matrix(&xs, y.clone());
        let data = TreeData::new(&x).unwrap();
        let (m, fitted) = fit_gbr_prepared(&data, &y, &GbrParams::new(4, Loss::LeastSquares)).unwrap();
        let p = m.predict(&x).unwrap();
        for (a, b) in p.iter().zip(&fitted) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_trees_predict_base() {
        let m = BoostedTreesModel {
            column_names: vec!["a".into()],
            trees: vec![],
            learning_rate: 0.1,
            n_estimators: 0,
            max_depth: 3,
            base_prediction: 4.5,
            loss: Loss::LeastSquares,
            train_loss: vec![],
        };
        assert_eq!(m.predict_row(&[100.0]), 4.5);
    }

    #[test]
    fn depth_one_tree_is_two_valued() {
        let tree = RegressionTree {
            nodes: vec![
                TreeNode::Split {
                    feature: 0,
                    threshold: 2.5,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { value: -1.0 },
                TreeNode::Leaf { value: 1.0 },
            ],
        };
        assert_eq!(tree.predict(&[2.0]), -1.0);
        assert_eq!(tree.predict(&[2.5]), -1.0);
        assert_eq!(tree.predict(&[3.0]), 1.0);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn pinball_root_leaf_is_empirical_quantile() {
        let y: Vec<f64> = (0..101).map(|i| ((i * 37) % 101) as f64).collect();
        let xs: Vec<Vec<f64>> = (0..101).map(|_| vec![1.0]).collect();
        let x = matrix(&xs, y.clone());
        for tau in [0.1, 0.5, 0.9] {
            let m = fit_gbr(&x, 3, Loss::Pinball { tau }).unwrap();
            let mut yy = y.clone();
            let q = empirical_quantile(&mut yy, tau);
            assert_eq!(m.base_prediction, q);
            // flat features: no splits, leaves are quantiles of zero residual shifts
            let p = m.predict_row(&[1.0]);
            assert!((p - q).abs() < 1e-9, "tau {tau}: {p} vs {q}");
        }
    }

    #[test]
    fn too_few_rows() {
        let x = matrix(&[vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 2.0, 3.0]);
        assert!(fit_gbr(&x, 3, Loss::LeastSquares).is_err());
    }

    #[test]
    fn empirical_quantile_lower() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(empirical_quantile(&mut v, 0.5), 2.0);
        assert_eq!(empirical_quantile(&mut v, 0.51), 3.0);
        assert_eq!(empirical_quantile(&mut v, 0.01), 1.0);
        assert_eq!(empirical_quantile(&mut v, 0.99), 4.0);
    }
}

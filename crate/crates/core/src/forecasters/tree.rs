//! CART regression trees with variance-reduction splits and bootstrap
//! aggregated forests. Also used as the optimizer's surrogate model.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deadline::Deadline;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeOptions {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Task {
    node: usize,
    rows: Vec<usize>,
    depth: usize,
}

fn mean_of(y: &[f64], rows: &[usize]) -> f64 {
    let first = y[rows[0]];
    if rows.iter().all(|&i| y[i] == first) {
        return first;
    }
    rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64
}

impl RegressionTree {
    /// Fits a tree on `rows` (indices into `x`/`y`, repeats allowed).
    pub fn fit<R: Rng + ?Sized>(
        x: &[Vec<f64>],
        y: &[f64],
        rows: Vec<usize>,
        options: &TreeOptions,
        rng: &mut R,
        deadline: &Deadline,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("cannot fit a tree on zero rows".into()));
        }
        let n_features = x[rows[0]].len();
        let mut nodes = vec![Node::Leaf(mean_of(y, &rows))];
        let mut stack = vec![Task { node: 0, rows, depth: 0 }];
        let mut features: Vec<usize> = (0..n_features).collect();
        while let Some(Task { node, rows, depth }) = stack.pop() {
            deadline.check()?;
            let splittable = rows.len() >= options.min_samples_split.max(2)
                && options.max_depth.is_none_or(|d| depth < d);
            if !splittable {
                continue;
            }
            features.shuffle(rng);
            let Some((feature, threshold)) = best_split(x, y, &rows, &features, options) else {
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf(mean_of(y, &l)));
            let right = nodes.len();
            nodes.push(Node::Leaf(mean_of(y, &r)));
            nodes[node] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
            stack.push(Task { node: right, rows: r, depth: depth + 1 });
            stack.push(Task { node: left, rows: l, depth: depth + 1 });
        }
        Ok(Self { nodes })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Best variance-reduction split. Features are scanned in the given order;
/// at least `max_features` are examined, more if none of those yields a
/// valid split.
fn best_split(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    options: &TreeOptions,
) -> Option<(usize, f64)> {
    let n = rows.len();
    let min_leaf = options.min_samples_leaf.max(1);
    let budget = options.max_features.unwrap_or(features.len()).clamp(1, features.len().max(1));
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = rows.iter().map(|&i| y[i] * y[i]).sum();
    let parent_sse = total_sq - total * total / n as f64;
    if parent_sse <= 1e-12 * total_sq.max(1.0) {
        return None;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = rows.to_vec();
    for (examined, &f) in features.iter().enumerate() {
        if examined >= budget && best.is_some() {
            break;
        }
        sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for k in 0..n - 1 {
            let yi = y[sorted[k]];
            left_sum += yi;
            left_sq += yi * yi;
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let (a, b) = (x[sorted[k]][f], x[sorted[k + 1]][f]);
            if a == b {
                continue;
            }
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / nl as f64) + (right_sq - right_sum * right_sum / nr as f64);
            if best.is_none_or(|(s, _, _)| sse < s) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some((sse, f, threshold));
            }
        }
    }
    best.filter(|(sse, _, _)| *sse < parent_sse).map(|(_, f, t)| (f, t))
}

/// Bootstrap-aggregated regression trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn fit<R: Rng + ?Sized>(
        x: &[Vec<f64>],
        y: &[f64],
        n_trees: usize,
        options: &TreeOptions,
        rng: &mut R,
        deadline: &Deadline,
    ) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidArgument("forest needs matching, non-empty data".into()));
        }
        if n_trees == 0 {
            return Err(Error::InvalidArgument("forest needs at least one tree".into()));
        }
        let n = x.len();
        let trees = (0..n_trees)
            .map(|_| {
                let rows = (0..n).map(|_| rng.random_range(0..n)).collect();
                RegressionTree::fit(x, y, rows, options, rng, deadline)
            })
            .collect::<Result<_>>()?;
        Ok(Self { trees })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Mean and population variance of the per-tree predictions.
    pub fn predict_with_variance(&self, x: &[f64]) -> (f64, f64) {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        if preds.iter().all(|p| *p == preds[0]) {
            return (preds[0], 0.0);
        }
        let n = preds.len() as f64;
        let mean = preds.iter().sum::<f64>() / n;
        let var = preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

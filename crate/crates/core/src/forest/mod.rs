//! CART regression forests with out-of-bag prediction.
//!
//! Used as a probability forest (0/1 outcomes) by the propensity ensemble and
//! as the outcome regression inside the causal survival forest.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

pub mod binning;

pub use binning::{BinnedColumns, MAX_BINS};

use crate::matrix::Matrix;
use crate::rng::{child_seed, stream_rng};
use crate::stats::pairwise_sum;
use crate::{Error, Result};

const OOB_CHUNK: usize = 16;
const PREDICT_BLOCK: usize = 256;
/// Child-size fraction used by the honest and nuisance forests.
pub const IMBALANCE_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Fraction of rows drawn without replacement per tree.
    pub sample_fraction: f64,
    /// Minimum number of training rows in every leaf.
    pub min_node_size: usize,
    /// Covariates tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    /// Each child of a split keeps at least this fraction of its parent.
    pub imbalance: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: 200,
            sample_fraction: 0.5,
            min_node_size: 5,
            mtry: None,
            imbalance: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum CartNode {
    Leaf(f64),
    Split {
        var: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct CartTree {
    nodes: Vec<CartNode>,
}

impl CartTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                CartNode::Leaf(v) => return v,
                CartNode::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => id = if x[var] <= threshold { left } else { right },
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, CartNode::Leaf(_)))
            .count()
    }
}

/// Best variance-reducing split of `rows` over the candidate variables,
/// returned as `(var, cut_index)`. Every child keeps at least `min_leaf` rows
/// and at least an `imbalance` fraction of the node.
pub(crate) fn best_mean_split(
    binned: &BinnedColumns,
    y: &[f64],
    rows: &[usize],
    vars: &[usize],
    min_leaf: usize,
    imbalance: f64,
) -> Option<(usize, usize)> {
    let m = rows.len();
    let min_leaf = min_leaf.max((imbalance * m as f64).ceil() as usize);
    if m < 2 * min_leaf.max(1) {
        return None;
    }
    let (total, sumsq) = rows
        .iter()
        .fold((0.0, 0.0), |(s, q), &r| (s + y[r], q + y[r] * y[r]));
    let base = total * total / m as f64;
    // Gains below rounding noise of the node's sum of squares are no split.
    let tol = 1e-10 * sumsq.max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, usize, usize)> = None;
    let mut consider = |nl: usize, sl: f64, v: usize, k: usize| {
        let nr = m - nl;
        if nl < min_leaf || nr < min_leaf {
            return;
        }
        let sr = total - sl;
        let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - base;
        if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
            best = Some((gain, v, k));
        }
    };
    let mut count = Vec::new();
    let mut sum = Vec::new();
    let mut pairs: Vec<(u16, f64)> = Vec::new();
    for &v in vars {
        let nb = binned.num_bins(v);
        if nb < 2 {
            continue;
        }
        let col = binned.column(v);
        if nb <= 8 * m {
            count.clear();
            count.resize(nb, 0usize);
            sum.clear();
            sum.resize(nb, 0.0f64);
            for &r in rows {
                let b = col[r] as usize;
                count[b] += 1;
                sum[b] += y[r];
            }
            let (mut nl, mut sl) = (0usize, 0.0);
            for k in 0..nb - 1 {
                if count[k] == 0 {
                    continue;
                }
                nl += count[k];
                sl += sum[k];
                if m - nl < min_leaf {
                    break;
                }
                consider(nl, sl, v, k);
            }
        } else {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (col[r], y[r])));
            pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let (mut nl, mut sl) = (0usize, 0.0);
            let mut i = 0;
            while i < m {
                let b = pairs[i].0;
                while i < m && pairs[i].0 == b {
                    nl += 1;
                    sl += pairs[i].1;
                    i += 1;
                }
                if i == m || m - nl < min_leaf {
                    break;
                }
                consider(nl, sl, v, b as usize);
            }
        }
    }
    let (gain, var, cut) = best?;
    (gain > tol).then_some((var, cut))
}

/// Reorders `rows` so that rows going left come first; returns the count.
pub(crate) fn partition_rows(binned: &BinnedColumns, var: usize, cut: usize, rows: &mut [usize]) -> usize {
    let col = binned.column(var);
    let mut left = 0;
    for i in 0..rows.len() {
        if col[rows[i]] as usize <= cut {
            rows.swap(i, left);
            left += 1;
        }
    }
    left
}

fn grow_cart<R: Rng>(
    binned: &BinnedColumns,
    y: &[f64],
    mut rows: Vec<usize>,
    mtry: usize,
    min_leaf: usize,
    imbalance: f64,
    rng: &mut R,
) -> CartTree {
    let p = binned.ncols();
    let mut nodes = vec![CartNode::Leaf(0.0)];
    let mut stack = vec![(0usize, 0usize, rows.len())];
    while let Some((id, start, end)) = stack.pop() {
        let vars: Vec<usize> = sample(rng, p, mtry.min(p)).into_vec();
        let slice = &mut rows[start..end];
        match best_mean_split(binned, y, slice, &vars, min_leaf, imbalance) {
            Some((var, cut)) => {
                let threshold = binned.split_threshold(var, cut, slice);
                let mid = start + partition_rows(binned, var, cut, slice);
                let left = nodes.len();
                nodes.push(CartNode::Leaf(0.0));
                nodes.push(CartNode::Leaf(0.0));
                nodes[id] = CartNode::Split {
                    var,
                    threshold,
                    left,
                    right: left + 1,
                };
                stack.push((left + 1, mid, end));
                stack.push((left, start, mid));
            }
            None => {
                let vals: Vec<f64> = slice.iter().map(|&r| y[r]).collect();
                nodes[id] = CartNode::Leaf(pairwise_sum(&vals) / vals.len() as f64);
            }
        }
    }
    CartTree { nodes }
}

#[derive(Debug, Clone)]
pub struct RegressionForest {
    trees: Vec<CartTree>,
    /// Sorted training rows used by each tree.
    samples: Vec<Vec<usize>>,
    n_train: usize,
    train_mean: f64,
}

impl RegressionForest {
    pub fn fit(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.nrows() != n {
            return Err(Error::Dimension(format!("{} rows for {n} outcomes", x.nrows())));
        }
        if !(params.sample_fraction > 0.0 && params.sample_fraction <= 1.0) || params.num_trees == 0 {
            return Err(Error::InvalidInput("bad forest parameters".into()));
        }
        let p = x.ncols();
        let mtry = params
            .mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1));
        let binned = BinnedColumns::new(x);
        let size = ((n as f64 * params.sample_fraction).round() as usize).clamp(1, n);
        let min_leaf = params.min_node_size.max(1);
        let built: Vec<(CartTree, Vec<usize>)> = (0..params.num_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(child_seed(seed, t as u64), 0);
                let mut rows = sample(&mut rng, n, size).into_vec();
                rows.sort_unstable();
                let tree = grow_cart(&binned, y, rows.clone(), mtry, min_leaf, params.imbalance, &mut rng);
                (tree, rows)
            })
            .collect();
        let (trees, samples) = built.into_iter().unzip();
        Ok(Self {
            trees,
            samples,
            n_train: n,
            train_mean: pairwise_sum(y) / n as f64,
        })
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        pairwise_sum(&preds) / preds.len() as f64
    }

    /// Predictions for every row; identical to `predict_row` row by row.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        rows.par_chunks(PREDICT_BLOCK)
            .flat_map_iter(|block| {
                // Tree-major within a block keeps each tree's nodes in cache.
                let t = self.trees.len();
                let mut buf = vec![0.0; block.len() * t];
                for (k, tree) in self.trees.iter().enumerate() {
                    for (j, &i) in block.iter().enumerate() {
                        buf[j * t + k] = tree.predict(x.row(i));
                    }
                }
                buf.chunks(t)
                    .map(|p| pairwise_sum(p) / t as f64)
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Out-of-bag predictions for the training rows. A row used by every
    /// tree falls back to the training mean.
    pub fn oob_predict(&self, x: &Matrix) -> Vec<f64> {
        assert_eq!(x.nrows(), self.n_train, "oob needs the training matrix");
        let n = self.n_train;
        // Fixed chunks keep the summation order independent of scheduling.
        let partials: Vec<(Vec<f64>, Vec<u32>)> = self
            .trees
            .par_chunks(OOB_CHUNK)
            .zip(self.samples.par_chunks(OOB_CHUNK))
            .map(|(trees, samples)| {
                let mut sum = vec![0.0; n];
                let mut count = vec![0u32; n];
                let mut in_bag = vec![false; n];
                for (tree, s) in trees.iter().zip(samples) {
                    in_bag.fill(false);
                    for &i in s {
                        in_bag[i] = true;
                    }
                    for i in (0..n).filter(|&i| !in_bag[i]) {
                        sum[i] += tree.predict(x.row(i));
                        count[i] += 1;
                    }
                }
                (sum, count)
            })
            .collect();
        let mut sum = vec![0.0; n];
        let mut count = vec![0u32; n];
        for (s, c) in partials {
            for i in 0..n {
                sum[i] += s[i];
                count[i] += c[i];
            }
        }
        sum.iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { self.train_mean } else { s / c as f64 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data(n: usize) -> (Matrix, Vec<f64>) {
        let mut rng = stream_rng(1, 0);
        let mut x = Matrix::zeros(n, 3);
        let mut y = Vec::new();
        for i in 0..n {
            for j in 0..3 {
                x.set(i, j, rng.random::<f64>());
            }
            y.push(if x.get(i, 0) > 0.5 { 2.0 } else { -1.0 });
        }
        (x, y)
    }

    #[test]
    fn learns_a_step() {
        let (x, y) = step_data(2000);
        let f = RegressionForest::fit(&x, &y, &ForestParams::default(), 3).unwrap();
        assert!((f.predict_row(&[0.8, 0.5, 0.5]) - 2.0).abs() < 0.1);
        assert!((f.predict_row(&[0.2, 0.5, 0.5]) + 1.0).abs() < 0.1);
        let all = f.predict(&x);
        for i in (0..2000).step_by(97) {
            assert_eq!(all[i], f.predict_row(x.row(i)));
        }
        let oob = f.oob_predict(&x);
        let err: f64 = oob.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2000.0;
        assert!(err < 0.1);
    }

    #[test]
    fn leaves_respect_min_size() {
        let (x, y) = step_data(300);
        let binned = BinnedColumns::new(&x);
        let mut rng = stream_rng(2, 0);
        let tree = grow_cart(&binned, &y, (0..300).collect(), 3, 40, 0.0, &mut rng);
        assert!(tree.num_leaves() <= 300 / 40);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = step_data(300);
        let p = ForestParams::default();
        let a = RegressionForest::fit(&x, &y, &p, 9).unwrap().oob_predict(&x);
        let b = RegressionForest::fit(&x, &y, &p, 9).unwrap().oob_predict(&x);
        assert_eq!(a, b);
    }
}

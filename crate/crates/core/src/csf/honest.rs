//! Honest regression forest on pseudo-outcomes with little-bags variance.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{CsfEstimate, CsfHyperparams};
use crate::forest::{best_mean_split, partition_rows, BinnedColumns, IMBALANCE_ALPHA};
use crate::matrix::Matrix;
use crate::rng::{child_seed, stream_rng};
use crate::stats::pairwise_sum;
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        j2: Vec<usize>,
        value: f64,
    },
    Split {
        var: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HonestTree {
    nodes: Vec<Node>,
    j1: Vec<usize>,
    /// Sorted union of both halves.
    sample: Vec<usize>,
}

impl HonestTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    var,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if x[*var] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn structure_rows(&self) -> &[usize] {
        &self.j1
    }

    pub fn sample(&self) -> &[usize] {
        &self.sample
    }

    /// Estimation-half rows per leaf, in node order.
    pub fn leaf_rows(&self) -> Vec<&[usize]> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { j2, .. } => Some(j2.as_slice()),
                _ => None,
            })
            .collect()
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { value, .. } => Some(*value),
                _ => None,
            })
            .collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_values().len()
    }

    /// Root split as `(variable, threshold)`, if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.nodes[0] {
            Node::Split { var, threshold, .. } => Some((*var, *threshold)),
            Node::Leaf { .. } => None,
        }
    }

    /// Recomputes every leaf value from its estimation rows.
    pub fn reestimate(&mut self, gamma: &[f64]) {
        for node in &mut self.nodes {
            if let Node::Leaf { j2, value } = node {
                let v: Vec<f64> = j2.iter().map(|&r| gamma[r]).collect();
                *value = pairwise_sum(&v) / v.len() as f64;
            }
        }
    }
}

fn route(nodes: &[Node], binned: &BinnedColumns, row: usize) -> usize {
    let mut id = 0;
    loop {
        match &nodes[id] {
            Node::Leaf { .. } => return id,
            Node::Split {
                var,
                threshold,
                left,
                right,
            } => id = if binned.value(*var, row) <= *threshold { *left } else { *right },
        }
    }
}

fn take_j2(nodes: &mut [Node], id: usize) -> Vec<usize> {
    match &mut nodes[id] {
        Node::Leaf { j2, .. } => std::mem::take(j2),
        Node::Split { left, right, .. } => {
            let (l, r) = (*left, *right);
            let mut rows = take_j2(nodes, l);
            rows.extend(take_j2(nodes, r));
            rows
        }
    }
}

/// Collapses splits with an undersized leaf child until every leaf holds at
/// least `min` estimation rows.
fn prune(nodes: &mut Vec<Node>, id: usize, min: usize) {
    if let Node::Split { left, right, .. } = nodes[id] {
        prune(nodes, left, min);
        prune(nodes, right, min);
        let small = |n: &Node| matches!(n, Node::Leaf { j2, .. } if j2.len() < min);
        if small(&nodes[left]) || small(&nodes[right]) {
            let mut rows = take_j2(nodes, id);
            rows.sort_unstable();
            nodes[id] = Node::Leaf { j2: rows, value: 0.0 };
        }
    }
}

fn compact(nodes: &[Node]) -> Vec<Node> {
    let mut out = Vec::new();
    fn copy(src: &[Node], id: usize, out: &mut Vec<Node>) -> usize {
        let at = out.len();
        out.push(src[id].clone());
        if let Node::Split { left, right, .. } = src[id] {
            let l = copy(src, left, out);
            let r = copy(src, right, out);
            if let Node::Split { left, right, .. } = &mut out[at] {
                *left = l;
                *right = r;
            }
        }
        at
    }
    copy(nodes, 0, &mut out);
    out
}

fn grow_honest_tree<R: Rng>(
    binned: &BinnedColumns,
    gamma: &[f64],
    mut sample_rows: Vec<usize>,
    hyper: &CsfHyperparams,
    mtry: usize,
    rng: &mut R,
) -> HonestTree {
    sample_rows.shuffle(rng);
    let m = sample_rows.len();
    let n1 = ((m as f64 * hyper.honesty_fraction).round() as usize).clamp(1, m - 1);
    let mut j1 = sample_rows[..n1].to_vec();
    let j2 = &sample_rows[n1..];
    let p = binned.ncols();
    let min = hyper.min_node_size;

    let mut nodes = vec![Node::Leaf { j2: Vec::new(), value: 0.0 }];
    let mut stack = vec![(0usize, 0usize, j1.len())];
    while let Some((id, start, end)) = stack.pop() {
        let vars: Vec<usize> = sample(rng, p, mtry.min(p)).into_vec();
        let slice = &mut j1[start..end];
        if let Some((var, cut)) = best_mean_split(binned, gamma, slice, &vars, min, IMBALANCE_ALPHA) {
            let threshold = binned.split_threshold(var, cut, slice);
            let mid = start + partition_rows(binned, var, cut, slice);
            let left = nodes.len();
            nodes.push(Node::Leaf { j2: Vec::new(), value: 0.0 });
            nodes.push(Node::Leaf { j2: Vec::new(), value: 0.0 });
            nodes[id] = Node::Split {
                var,
                threshold,
                left,
                right: left + 1,
            };
            stack.push((left + 1, mid, end));
            stack.push((left, start, mid));
        }
    }
    let mut j2_sorted = j2.to_vec();
    j2_sorted.sort_unstable();
    for &r in &j2_sorted {
        let leaf = route(&nodes, binned, r);
        if let Node::Leaf { j2, .. } = &mut nodes[leaf] {
            j2.push(r);
        }
    }
    prune(&mut nodes, 0, min);
    j1.sort_unstable();
    let mut sample = sample_rows;
    sample.sort_unstable();
    let mut tree = HonestTree {
        nodes: compact(&nodes),
        j1,
        sample,
    };
    tree.reestimate(gamma);
    tree
}

#[derive(Debug, Clone)]
pub struct CausalSurvivalForest {
    trees: Vec<HonestTree>,
    /// Sorted half-sample shared by each bag of trees.
    bags: Vec<Vec<usize>>,
    bag_size: usize,
    n_train: usize,
}

pub fn grow_forest(x_aug: &Matrix, gamma: &[f64], hyper: &CsfHyperparams, seed: u64) -> Result<CausalSurvivalForest> {
    hyper.validate()?;
    let n = gamma.len();
    if x_aug.nrows() != n {
        return Err(Error::Dimension(format!("{} rows for {n} pseudo-outcomes", x_aug.nrows())));
    }
    if n < 4 * hyper.min_node_size || n < 4 {
        return Err(Error::TooSmall(format!(
            "n = {n} below 4 x min_node_size = {}",
            4 * hyper.min_node_size
        )));
    }
    if let Some(i) = gamma.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { row: i, what: "pseudo-outcome" });
    }
    let binned = BinnedColumns::new(x_aug);
    let mtry = hyper.mtry_for(x_aug.ncols());
    let num_bags = hyper.num_trees / hyper.bag_size;
    let half = n / 2;
    let tree_size = ((n as f64 * hyper.subsample_fraction).round() as usize).clamp(2, half.max(2));
    let bags: Vec<Vec<usize>> = (0..num_bags)
        .map(|b| {
            let mut rng = stream_rng(child_seed(seed, b as u64), 0);
            let mut rows = sample(&mut rng, n, half).into_vec();
            rows.sort_unstable();
            rows
        })
        .collect();
    let trees: Vec<HonestTree> = (0..hyper.num_trees)
        .into_par_iter()
        .map(|t| {
            let bag = &bags[t / hyper.bag_size];
            let mut rng = stream_rng(child_seed(seed, t as u64), 1);
            let rows = if tree_size >= bag.len() {
                bag.clone()
            } else {
                sample(&mut rng, bag.len(), tree_size)
                    .into_iter()
                    .map(|k| bag[k])
                    .collect()
            };
            grow_honest_tree(&binned, gamma, rows, hyper, mtry, &mut rng)
        })
        .collect();
    Ok(CausalSurvivalForest {
        trees,
        bags,
        bag_size: hyper.bag_size,
        n_train: n,
    })
}

/// Point estimate and little-bags standard error from per-bag tree predictions.
fn bag_summary(per_bag: &[Vec<f64>]) -> (f64, f64) {
    let all: Vec<f64> = per_bag.iter().flatten().copied().collect();
    let theta = pairwise_sum(&all) / all.len() as f64;
    let g = per_bag.len();
    if g < 2 {
        return (theta, VARIANCE_FLOOR.sqrt());
    }
    let means: Vec<f64> = per_bag.iter().map(|b| pairwise_sum(b) / b.len() as f64).collect();
    let between = means.iter().map(|m| (m - theta).powi(2)).sum::<f64>() / (g - 1) as f64;
    let ell = per_bag[0].len();
    let within = if ell > 1 {
        per_bag
            .iter()
            .zip(&means)
            .map(|(b, m)| b.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ell - 1) as f64)
            .sum::<f64>()
            / g as f64
    } else {
        0.0
    };
    let var = (between - within / ell as f64).max(VARIANCE_FLOOR);
    (theta, var.sqrt())
}

impl CausalSurvivalForest {
    pub fn trees(&self) -> &[HonestTree] {
        &self.trees
    }

    pub fn trees_mut(&mut self) -> &mut [HonestTree] {
        &mut self.trees
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    fn bag_predictions(&self, x: &[f64], bag: usize) -> Vec<f64> {
        self.trees[bag * self.bag_size..(bag + 1) * self.bag_size]
            .iter()
            .map(|t| t.predict(x))
            .collect()
    }

    /// Estimates at new covariate rows using every tree.
    pub fn predict(&self, x: &Matrix) -> CsfEstimate {
        let (theta, se): (Vec<f64>, Vec<f64>) = x
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|row| {
                let per_bag: Vec<Vec<f64>> = (0..self.bags.len()).map(|b| self.bag_predictions(row, b)).collect();
                bag_summary(&per_bag)
            })
            .unzip();
        CsfEstimate::from_se(theta, se)
    }

    /// In-sample estimates using only bags whose half-sample excludes the row.
    pub fn predict_oob(&self, x: &Matrix) -> CsfEstimate {
        assert_eq!(x.nrows(), self.n_train, "oob needs the training matrix");
        let (theta, se): (Vec<f64>, Vec<f64>) = (0..self.n_train)
            .into_par_iter()
            .map(|i| {
                let per_bag: Vec<Vec<f64>> = (0..self.bags.len())
                    .filter(|&b| self.bags[b].binary_search(&i).is_err())
                    .map(|b| self.bag_predictions(x.row(i), b))
                    .collect();
                if per_bag.is_empty() {
                    let all: Vec<Vec<f64>> = (0..self.bags.len()).map(|b| self.bag_predictions(x.row(i), b)).collect();
                    bag_summary(&all)
                } else {
                    bag_summary(&per_bag)
                }
            })
            .unzip();
        CsfEstimate::from_se(theta, se)
    }
}

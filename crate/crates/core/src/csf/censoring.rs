//! Survival forest for the censoring distribution.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::forest::{BinnedColumns, IMBALANCE_ALPHA};
use crate::matrix::Matrix;
use crate::rng::{child_seed, stream_rng};
use crate::{Error, Result};

pub const SURVIVAL_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CensoringParams {
    pub num_trees: usize,
    pub sample_fraction: f64,
    pub min_node_size: usize,
    /// Random cut points tried per candidate covariate.
    pub split_candidates: usize,
    /// Each child of a split keeps at least this fraction of its parent.
    pub imbalance: f64,
}

impl Default for CensoringParams {
    fn default() -> Self {
        Self {
            num_trees: 500,
            sample_fraction: 0.5,
            min_node_size: 15,
            split_candidates: 10,
            imbalance: IMBALANCE_ALPHA,
        }
    }
}

/// Product-limit estimate of `S(t-)` from rows with weights. `rank` orders
/// rows by time; `event[r]` marks a jump.
fn weighted_left_limit(time: &[f64], event: &[bool], rows: &mut [(usize, f64)], t: f64) -> f64 {
    rows.sort_unstable_by(|a, b| time[a.0].total_cmp(&time[b.0]));
    let mut at_risk: f64 = rows.iter().map(|r| r.1).sum();
    let mut s = 1.0;
    let mut i = 0;
    while i < rows.len() && time[rows[i].0] < t {
        let u = time[rows[i].0];
        let (mut d, mut m) = (0.0, 0.0);
        while i < rows.len() && time[rows[i].0] == u {
            let (r, w) = rows[i];
            m += w;
            if event[r] {
                d += w;
            }
            i += 1;
        }
        if d > 0.0 && at_risk > 0.0 {
            s *= (1.0 - d / at_risk).max(0.0);
        }
        at_risk -= m;
    }
    s
}

#[derive(Debug, Clone)]
enum Node {
    /// Index into the tree's estimation-row lists.
    Leaf(usize),
    Split {
        var: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct SurvivalTree {
    nodes: Vec<Node>,
    leaves: Vec<Vec<usize>>,
    /// Sorted rows used by the tree (both halves).
    sample: Vec<usize>,
}

impl SurvivalTree {
    fn leaf_of(&self, x: &[f64]) -> &[usize] {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf(l) => return &self.leaves[l],
                Node::Split {
                    var,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if x[var] <= threshold { left } else { right },
            }
        }
    }
}

/// Squared standardized log-rank statistic for the split of time-ordered
/// `rows` into `go_left` and the rest.
fn log_rank(time: &[f64], event: &[bool], rows: &[usize], go_left: impl Fn(usize) -> bool) -> f64 {
    let mut n = rows.len() as f64;
    let mut n_left = rows.iter().filter(|&&r| go_left(r)).count() as f64;
    let (mut num, mut var) = (0.0, 0.0);
    let mut i = 0;
    while i < rows.len() {
        let t = time[rows[i]];
        let (mut d, mut d_left, mut m, mut m_left) = (0.0, 0.0, 0.0, 0.0);
        while i < rows.len() && time[rows[i]] == t {
            let r = rows[i];
            let l = go_left(r);
            m += 1.0;
            m_left += l as u8 as f64;
            if event[r] {
                d += 1.0;
                d_left += l as u8 as f64;
            }
            i += 1;
        }
        if d > 0.0 && n > 1.0 {
            let frac = n_left / n;
            num += d_left - d * frac;
            var += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
        }
        n -= m;
        n_left -= m_left;
    }
    if var > 0.0 {
        num * num / var
    } else {
        0.0
    }
}

fn best_log_rank_split<R: Rng>(
    binned: &BinnedColumns,
    time: &[f64],
    event: &[bool],
    rows: &[usize],
    mtry: usize,
    params: &CensoringParams,
    rng: &mut R,
) -> Option<(usize, usize)> {
    let min_leaf = params
        .min_node_size
        .max(1)
        .max((params.imbalance * rows.len() as f64).ceil() as usize);
    if rows.len() < 2 * min_leaf || !rows.iter().any(|&r| event[r]) {
        return None;
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for var in sample(rng, binned.ncols(), mtry.min(binned.ncols())) {
        let col = binned.column(var);
        let (lo, hi) = rows
            .iter()
            .fold((u16::MAX, 0u16), |(lo, hi), &r| (lo.min(col[r]), hi.max(col[r])));
        if lo >= hi {
            continue;
        }
        let span = (hi - lo) as usize;
        let mut cuts: Vec<usize> = if span <= params.split_candidates {
            (lo as usize..hi as usize).collect()
        } else {
            sample(rng, span, params.split_candidates)
                .into_iter()
                .map(|k| lo as usize + k)
                .collect()
        };
        cuts.sort_unstable();
        for cut in cuts {
            let n_left = rows.iter().filter(|&&r| col[r] as usize <= cut).count();
            if n_left < min_leaf || rows.len() - n_left < min_leaf {
                continue;
            }
            let stat = log_rank(time, event, rows, |r| col[r] as usize <= cut);
            if best.is_none_or(|(b, _, _)| stat > b) {
                best = Some((stat, var, cut));
            }
        }
    }
    best.filter(|b| b.0 > 0.0).map(|(_, var, cut)| (var, cut))
}

/// Honest survival tree: log-rank splits on the first half of `rows` (which
/// must be in time order), leaves populated with the second half.
fn grow_tree<R: Rng>(
    binned: &BinnedColumns,
    time: &[f64],
    event: &[bool],
    rows: &[usize],
    mtry: usize,
    params: &CensoringParams,
    rng: &mut R,
) -> SurvivalTree {
    let mut flags: Vec<bool> = (0..rows.len()).map(|k| k < rows.len() / 2).collect();
    flags.shuffle(rng);
    let mut j1: Vec<usize> = rows.iter().zip(&flags).filter(|p| *p.1).map(|p| *p.0).collect();
    let j2: Vec<usize> = rows.iter().zip(&flags).filter(|p| !*p.1).map(|p| *p.0).collect();

    let mut nodes = vec![Node::Leaf(0)];
    let mut stack = vec![(0usize, 0usize, j1.len())];
    let mut scratch = Vec::new();
    while let Some((id, start, end)) = stack.pop() {
        if let Some((var, cut)) = best_log_rank_split(binned, time, event, &j1[start..end], mtry, params, rng) {
            let threshold = binned.split_threshold(var, cut, &j1[start..end]);
            // Stable partition keeps both children in time order.
            let col = binned.column(var);
            scratch.clear();
            scratch.extend(j1[start..end].iter().copied().filter(|&r| col[r] as usize <= cut));
            let mid = start + scratch.len();
            scratch.extend(j1[start..end].iter().copied().filter(|&r| col[r] as usize > cut));
            j1[start..end].copy_from_slice(&scratch);
            let left = nodes.len();
            nodes.push(Node::Leaf(0));
            nodes.push(Node::Leaf(0));
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
    // Route the estimation half, then collapse splits with an empty side.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for &r in &j2 {
        let mut id = 0;
        while let Node::Split {
            var,
            threshold,
            left,
            right,
        } = nodes[id]
        {
            id = if binned.value(var, r) <= threshold { left } else { right };
        }
        members[id].push(r);
    }
    fn collapse(nodes: &mut [Node], members: &mut [Vec<usize>], id: usize) -> bool {
        if let Node::Split { left, right, .. } = nodes[id] {
            let l = collapse(nodes, members, left);
            let r = collapse(nodes, members, right);
            if !l || !r || members[left].is_empty() || members[right].is_empty() {
                let mut rows = std::mem::take(&mut members[left]);
                rows.extend(std::mem::take(&mut members[right]));
                members[id] = rows;
                nodes[id] = Node::Leaf(0);
                return true;
            }
            return false;
        }
        true
    }
    collapse(&mut nodes, &mut members, 0);
    let mut out_nodes = Vec::new();
    let mut leaves = Vec::new();
    fn copy(
        src: &[Node],
        members: &mut [Vec<usize>],
        id: usize,
        out: &mut Vec<Node>,
        leaves: &mut Vec<Vec<usize>>,
    ) -> usize {
        let at = out.len();
        match src[id] {
            Node::Leaf(_) => {
                out.push(Node::Leaf(leaves.len()));
                leaves.push(std::mem::take(&mut members[id]));
            }
            Node::Split {
                var,
                threshold,
                left,
                right,
            } => {
                out.push(Node::Leaf(0));
                let l = copy(src, members, left, out, leaves);
                let r = copy(src, members, right, out, leaves);
                out[at] = Node::Split {
                    var,
                    threshold,
                    left: l,
                    right: r,
                };
            }
        }
        at
    }
    copy(&nodes, &mut members, 0, &mut out_nodes, &mut leaves);
    let mut sample = rows.to_vec();
    sample.sort_unstable();
    SurvivalTree {
        nodes: out_nodes,
        leaves,
        sample,
    }
}

#[derive(Debug, Clone)]
struct Fitted {
    trees: Vec<SurvivalTree>,
    time: Vec<f64>,
    event: Vec<bool>,
}

/// Evaluator for the censoring survival function `S_C(t | x)`.
#[derive(Debug, Clone)]
pub struct CensoringSurvival {
    fitted: Option<Fitted>,
    n_train: usize,
    /// Set when no observation was censored and the evaluator is constant 1.
    pub no_censoring: bool,
}

/// Fits a survival forest to the censoring times (`delta == 0` is the event).
pub fn fit_censoring_survival(x: &Matrix, y: &[f64], delta: &[u8], seed: u64) -> Result<CensoringSurvival> {
    fit_censoring_survival_with(x, y, delta, &CensoringParams::default(), seed)
}

pub fn fit_censoring_survival_with(
    x: &Matrix,
    y: &[f64],
    delta: &[u8],
    params: &CensoringParams,
    seed: u64,
) -> Result<CensoringSurvival> {
    let n = y.len();
    if x.nrows() != n || delta.len() != n {
        return Err(Error::Dimension("censoring forest inputs disagree in length".into()));
    }
    if n < 2 {
        return Err(Error::TooSmall(format!("n = {n}")));
    }
    if delta.iter().all(|&d| d == 1) {
        return Ok(CensoringSurvival {
            fitted: None,
            n_train: n,
            no_censoring: true,
        });
    }
    let event: Vec<bool> = delta.iter().map(|&d| d == 0).collect();
    let binned = BinnedColumns::new(x);
    let p = x.ncols();
    let mtry = (((p as f64).sqrt() + 20.0).ceil() as usize).min(p).max(1);
    let size = ((n as f64 * params.sample_fraction).round() as usize).clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut rank = vec![0usize; n];
    for (k, &r) in order.iter().enumerate() {
        rank[r] = k;
    }
    let trees: Vec<SurvivalTree> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(child_seed(seed, t as u64), 0);
            let mut rows = sample(&mut rng, n, size).into_vec();
            rows.sort_unstable_by_key(|&r| rank[r]);
            grow_tree(&binned, y, &event, &rows, mtry, params, &mut rng)
        })
        .collect();
    Ok(CensoringSurvival {
        fitted: Some(Fitted {
            trees,
            time: y.to_vec(),
            event,
        }),
        n_train: n,
        no_censoring: false,
    })
}

impl Fitted {
    /// Kaplan-Meier left limit at `t` with forest neighbour weights at `x`,
    /// using only trees accepted by `keep`.
    fn evaluate(&self, t: f64, x: &[f64], keep: impl Fn(&SurvivalTree) -> bool) -> Option<f64> {
        let mut weights: HashMap<usize, f64> = HashMap::new();
        let mut used = 0usize;
        for tree in self.trees.iter().filter(|tr| keep(tr)) {
            let leaf = tree.leaf_of(x);
            if leaf.is_empty() {
                continue;
            }
            used += 1;
            let w = 1.0 / leaf.len() as f64;
            for &r in leaf {
                *weights.entry(r).or_insert(0.0) += w;
            }
        }
        if used == 0 {
            return None;
        }
        let mut rows: Vec<(usize, f64)> = weights.into_iter().collect();
        rows.sort_unstable_by_key(|r| r.0);
        Some(weighted_left_limit(&self.time, &self.event, &mut rows, t).max(SURVIVAL_FLOOR))
    }
}

impl CensoringSurvival {
    /// `S_C(t- | x)` from the forest-weighted product-limit estimate, floored.
    pub fn survival(&self, t: f64, x: &[f64]) -> f64 {
        match &self.fitted {
            None => 1.0,
            Some(f) => f.evaluate(t, x, |_| true).unwrap_or(1.0),
        }
    }

    /// Out-of-bag `S_C(times[i]- | x_i)` for the training rows.
    pub fn oob_survival(&self, x: &Matrix, times: &[f64]) -> Vec<f64> {
        assert_eq!(x.nrows(), self.n_train, "oob needs the training matrix");
        let Some(f) = &self.fitted else {
            return vec![1.0; self.n_train];
        };
        (0..self.n_train)
            .into_par_iter()
            .map(|i| {
                f.evaluate(times[i], x.row(i), |tr| tr.sample.binary_search(&i).is_err())
                    .unwrap_or_else(|| self.survival(times[i], x.row(i)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn kaplan_meier_hand_example() {
        let time = [1.0, 2.0, 2.0, 3.0, 5.0];
        let event = [true, false, true, true, false];
        let km = |t: f64, w: f64| {
            let mut rows: Vec<(usize, f64)> = (0..5).map(|r| (r, w)).collect();
            weighted_left_limit(&time, &event, &mut rows, t)
        };
        let s1 = 0.8;
        let s2 = s1 * (1.0 - 1.0 / 4.0);
        assert_eq!(km(1.0, 1.0), 1.0);
        assert_eq!(km(2.0, 1.0), s1);
        assert!((km(2.5, 1.0) - s2).abs() < 1e-15);
        assert!((km(4.0, 1.0) - s2 * 0.5).abs() < 1e-15);
        // common weights cancel
        assert!((km(4.0, 0.37) - s2 * 0.5).abs() < 1e-14);
    }

    #[test]
    fn log_rank_matches_two_sample_formula() {
        // Two groups, no ties: group L = {0, 2}, times 1..4 all events.
        let time = [1.0, 2.0, 3.0, 4.0];
        let event = [true; 4];
        let stat = log_rank(&time, &event, &[0, 1, 2, 3], |r| r % 2 == 0);
        // O - E = (1 - 2/4) + (0 - 1/3) + (1 - 1/2) + 0
        let num: f64 = 0.5 - 1.0 / 3.0 + 0.5;
        let var = 0.25 + (1.0 / 3.0) * (2.0 / 3.0) + 0.25;
        assert!((stat - num * num / var).abs() < 1e-12);
    }

    #[test]
    fn no_censoring_gives_constant_one() {
        let x = Matrix::zeros(10, 2);
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = fit_censoring_survival(&x, &y, &[1; 10], 1).unwrap();
        assert!(s.no_censoring);
        assert_eq!(s.survival(3.0, &[0.0, 0.0]), 1.0);
        assert_eq!(s.oob_survival(&x, &y), vec![1.0; 10]);
    }

    #[test]
    fn recovers_exponential_censoring() {
        let n = 10_000;
        let rate = 0.5;
        let mut rng = stream_rng(42, 0);
        let mut x = Matrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        let mut delta = Vec::with_capacity(n);
        let exp_c = Exp::new(rate).unwrap();
        let exp_t = Exp::new(0.7).unwrap();
        for i in 0..n {
            for j in 0..3 {
                x.set(i, j, rng.random::<f64>());
            }
            let t: f64 = exp_t.sample(&mut rng);
            let c: f64 = exp_c.sample(&mut rng);
            y.push(t.min(c));
            delta.push((t <= c) as u8);
        }
        let s = fit_censoring_survival(&x, &y, &delta, 7).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let t90 = crate::stats::quantile_sorted(&sorted, 0.9);
        let grid: Vec<f64> = (1..=20).map(|k| t90 * k as f64 / 20.0).collect();
        for probe in [[0.1, 0.5, 0.9], [0.5, 0.5, 0.5], [0.9, 0.2, 0.4], [0.05, 0.05, 0.05]] {
            let mut last = 1.0;
            for &t in &grid {
                let v = s.survival(t, &probe);
                let truth = (-rate * t).exp().max(SURVIVAL_FLOOR);
                assert!((v - truth).abs() < 0.05, "t {t}: {v} vs {truth}");
                assert!(v <= last);
                last = v;
            }
        }
        let mut shuffled: Vec<f64> = y.clone();
        shuffled.shuffle(&mut rng);
        let oob = s.oob_survival(&x, &shuffled);
        assert!(oob.iter().all(|&v| (SURVIVAL_FLOOR..=1.0).contains(&v)));
    }
}

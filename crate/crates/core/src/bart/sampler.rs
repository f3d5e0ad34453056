//! Metropolis-within-Gibbs sampler for the censored AFT sum-of-trees model.
//!
//! The chain works on a standardized log-time scale. Every covariate is
//! discretized once into cut-grid bins, so a split `x <= cuts[k]` is the
//! integer comparison `bin(x) <= k`. Each tree tracks the leaf of `3n` rows:
//! the observed rows, then every individual with treatment forced to 1, then
//! forced to 0. The latter two give the counterfactual contrast per draw.

use rand::Rng;

use super::conditionals::{calibrate_lambda, draw_leaf_value, draw_sigma2, leaf_log_marginal};
use super::tree::{RegressionTree, SplitRule, ROOT};
use super::truncnorm::sample_truncated_normal;
use super::{AcceptanceStats, BartHyperparams};
use crate::matrix::Matrix;
use crate::rng::{stream_rng, SimRng};
use crate::{Error, Result};

const MAX_CUTS: usize = 100;
const P_GROW: f64 = 0.28;
const P_PRUNE: f64 = 0.28;
const SIGMA_HAT_FLOOR: f64 = 1e-6;

/// Split variables: column 0 is treatment, then the covariates.
pub(crate) struct Design {
    n: usize,
    cuts: Vec<Vec<f64>>,
    /// `bins[v][r]` for the `3n` routed rows.
    bins: Vec<Vec<u32>>,
}

fn cut_grid(values: &[f64]) -> Vec<f64> {
    let mut u = values.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    if u.len() < 2 {
        return Vec::new();
    }
    let mids: Vec<f64> = u.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if mids.len() <= MAX_CUTS {
        return mids;
    }
    let mut picked: Vec<f64> = (0..MAX_CUTS)
        .map(|k| mids[(k * (mids.len() - 1)) / (MAX_CUTS - 1)])
        .collect();
    picked.dedup();
    picked
}

impl Design {
    pub(crate) fn new(x: &Matrix, a: &[u8]) -> Self {
        let n = a.len();
        let mut cuts = vec![vec![0.5]];
        let mut bins = Vec::with_capacity(x.ncols() + 1);
        let mut tb = Vec::with_capacity(3 * n);
        tb.extend(a.iter().map(|&v| u32::from(v)));
        tb.extend(std::iter::repeat_n(1, n));
        tb.extend(std::iter::repeat_n(0, n));
        bins.push(tb);
        for j in 0..x.ncols() {
            let col = x.column(j);
            let grid = cut_grid(&col);
            let b: Vec<u32> = col
                .iter()
                .map(|&v| grid.partition_point(|&c| c < v) as u32)
                .collect();
            let mut b3 = Vec::with_capacity(3 * n);
            for _ in 0..3 {
                b3.extend_from_slice(&b);
            }
            bins.push(b3);
            cuts.push(grid);
        }
        Self { n, cuts, bins }
    }

    fn nvars(&self) -> usize {
        self.cuts.len()
    }

    fn splittable_vars(&self, rows: &[u32]) -> Vec<usize> {
        (0..self.nvars())
            .filter(|&v| {
                let b = &self.bins[v];
                let first = b[rows[0] as usize];
                rows.iter().any(|&r| b[r as usize] != first)
            })
            .collect()
    }

    fn bin_range(&self, v: usize, rows: &[u32]) -> (u32, u32) {
        let b = &self.bins[v];
        rows.iter().fold((u32::MAX, 0), |(lo, hi), &r| {
            let x = b[r as usize];
            (lo.min(x), hi.max(x))
        })
    }

    fn rule(&self, v: usize, k: u32) -> SplitRule {
        SplitRule {
            var: v,
            cut_index: k,
            cut_value: self.cuts[v][k as usize],
        }
    }
}

struct TreeState {
    tree: RegressionTree,
    leaf_of: Vec<u32>,
}

#[derive(Default, Clone, Copy)]
struct Suff {
    n: f64,
    sum: f64,
}

impl Suff {
    fn add(&mut self, r: f64) {
        self.n += 1.0;
        self.sum += r;
    }
}

/// One MCMC chain. Exposed so tests can inspect intermediate states.
pub struct Sampler {
    design: Design,
    hyper: BartHyperparams,
    /// Standardized log times, imputed for censored rows.
    z: Vec<f64>,
    /// Standardized log follow-up for censored rows, `-inf` for events.
    lower: Vec<f64>,
    fit: Vec<f64>,
    sigma2: f64,
    sigma_mu2: f64,
    lambda: f64,
    trees: Vec<TreeState>,
    rng: SimRng,
    pub(crate) offset: f64,
    pub(crate) scale: f64,
    stats: AcceptanceStats,
    resid: Vec<f64>,
    g_old: Vec<f64>,
}

fn ols_sigma(x: &Matrix, a: &[u8], y: &[f64]) -> f64 {
    let n = y.len();
    let p = x.ncols() + 2;
    if n <= p + 1 {
        return crate::stats::sd(y);
    }
    let design = nalgebra::DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        1 => f64::from(a[i]),
        _ => x.get(i, j - 2),
    });
    let yv = nalgebra::DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    match svd.solve(&yv, 1e-10) {
        Ok(beta) => {
            let r = yv - design * beta;
            (r.norm_squared() / (n - p) as f64).sqrt()
        }
        Err(_) => crate::stats::sd(y),
    }
}

impl Sampler {
    pub fn new(
        x: &Matrix,
        a: &[u8],
        y: &[f64],
        delta: &[u8],
        hyper: &BartHyperparams,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        let n = y.len();
        if n == 0 || x.nrows() != n || a.len() != n || delta.len() != n {
            return Err(Error::Dimension(format!(
                "x has {} rows, a {}, y {}, delta {}",
                x.nrows(),
                a.len(),
                n,
                delta.len()
            )));
        }
        if delta.iter().all(|&d| d == 0) {
            return Err(Error::NoEvents);
        }
        let mut logy = Vec::with_capacity(n);
        for (i, &v) in y.iter().enumerate() {
            let l = v.ln();
            if !(v > 0.0) || !l.is_finite() {
                return Err(Error::NonFinite {
                    row: i,
                    what: "log follow-up time",
                });
            }
            logy.push(l);
        }
        let (zmin, zmax) = logy
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let offset = 0.5 * (zmin + zmax);
        let scale = if zmax - zmin > 1e-12 { zmax - zmin } else { 1.0 };

        let sigma_hat = ols_sigma(x, a, &logy).max(SIGMA_HAT_FLOOR * scale);
        let z: Vec<f64> = logy
            .iter()
            .zip(delta)
            .map(|(&l, &d)| {
                let init = if d == 0 { l + 0.5 * sigma_hat } else { l };
                (init - offset) / scale
            })
            .collect();
        let lower: Vec<f64> = logy
            .iter()
            .zip(delta)
            .map(|(&l, &d)| if d == 0 { (l - offset) / scale } else { f64::NEG_INFINITY })
            .collect();
        let sigma_hat_std = sigma_hat / scale;
        let lambda = calibrate_lambda(sigma_hat_std, hyper.nu, hyper.q);
        let j = hyper.num_trees as f64;
        let sigma_mu = 1.0 / (2.0 * hyper.k * j.sqrt());

        let design = Design::new(x, a);
        let mean_z = crate::stats::mean(&z);
        let init = mean_z / j;
        let trees = (0..hyper.num_trees)
            .map(|_| TreeState {
                tree: RegressionTree::stump(init),
                leaf_of: vec![ROOT as u32; 3 * n],
            })
            .collect();
        let mut s = Self {
            design,
            hyper: hyper.clone(),
            z,
            lower,
            fit: vec![0.0; n],
            sigma2: sigma_hat_std * sigma_hat_std,
            sigma_mu2: sigma_mu * sigma_mu,
            lambda,
            trees,
            rng: stream_rng(seed, 0),
            offset,
            scale,
            stats: AcceptanceStats::default(),
            resid: vec![0.0; n],
            g_old: vec![0.0; n],
        };
        s.resync_fit();
        Ok(s)
    }

    fn n(&self) -> usize {
        self.design.n
    }

    /// Recomputes the fit as the ordered sum of tree predictions.
    fn resync_fit(&mut self) {
        let n = self.n();
        self.fit.iter_mut().for_each(|f| *f = 0.0);
        for ts in &self.trees {
            for (i, f) in self.fit.iter_mut().enumerate().take(n) {
                *f += ts.tree.value(ts.leaf_of[i] as usize);
            }
        }
    }

    /// One full sweep: every tree, then sigma, then the censored outcomes.
    pub fn step(&mut self) {
        for j in 0..self.trees.len() {
            self.update_tree(j);
        }
        self.resync_fit();
        let ssr: f64 = self.z.iter().zip(&self.fit).map(|(z, f)| (z - f) * (z - f)).sum();
        self.sigma2 = draw_sigma2(ssr, self.n(), self.hyper.nu, self.lambda, &mut self.rng);
        let sigma = self.sigma2.sqrt();
        for i in 0..self.n() {
            if self.lower[i] > f64::NEG_INFINITY {
                self.z[i] = sample_truncated_normal(self.fit[i], sigma, self.lower[i], &mut self.rng);
            }
        }
    }

    fn update_tree(&mut self, j: usize) {
        let n = self.n();
        {
            let ts = &self.trees[j];
            for i in 0..n {
                let g = ts.tree.value(ts.leaf_of[i] as usize);
                self.g_old[i] = g;
                self.resid[i] = self.z[i] - self.fit[i] + g;
            }
        }
        let u: f64 = self.rng.random();
        if self.trees[j].tree.is_stump() || u < P_GROW {
            self.propose_grow(j);
        } else if u < P_GROW + P_PRUNE {
            self.propose_prune(j);
        } else {
            self.propose_change(j);
        }
        self.draw_leaves(j);
        let ts = &self.trees[j];
        for i in 0..n {
            self.fit[i] += ts.tree.value(ts.leaf_of[i] as usize) - self.g_old[i];
        }
    }

    fn rows_in(&self, j: usize, a: usize, b: usize) -> Vec<u32> {
        let leaf_of = &self.trees[j].leaf_of[..self.n()];
        (0..self.n() as u32)
            .filter(|&r| {
                let l = leaf_of[r as usize] as usize;
                l == a || l == b
            })
            .collect()
    }

    fn split_suff(&self, rows: &[u32], v: usize, k: u32) -> (Suff, Suff) {
        let b = &self.design.bins[v];
        let mut l = Suff::default();
        let mut r = Suff::default();
        for &row in rows {
            let res = self.resid[row as usize];
            if b[row as usize] <= k {
                l.add(res);
            } else {
                r.add(res);
            }
        }
        (l, r)
    }

    fn lml(&self, s: Suff) -> f64 {
        leaf_log_marginal(s.n, s.sum, self.sigma2, self.sigma_mu2)
    }

    /// Log prior ratio of splitting a leaf at depth `d`.
    fn log_split_prior(&self, d: u32) -> f64 {
        let (alpha, beta) = (self.hyper.alpha, self.hyper.beta);
        let d = f64::from(d);
        let p_split = alpha * (1.0 + d).powf(-beta);
        let p_child = alpha * (2.0 + d).powf(-beta);
        p_split.ln() + 2.0 * (1.0 - p_child).ln() - (1.0 - p_split).ln()
    }

    fn propose_grow(&mut self, j: usize) {
        self.stats.grow_proposed += 1;
        let tree = &self.trees[j].tree;
        let leaves = tree.leaves();
        let b = leaves.len();
        let leaf = leaves[self.rng.random_range(0..b)];
        let rows = self.rows_in(j, leaf, leaf);
        if rows.len() < 2 {
            return;
        }
        let avail = self.design.splittable_vars(&rows);
        if avail.is_empty() {
            return;
        }
        let v = avail[self.rng.random_range(0..avail.len())];
        let (lo, hi) = self.design.bin_range(v, &rows);
        let k = self.rng.random_range(lo..hi);
        let (sl, sr) = self.split_suff(&rows, v, k);
        let parent = Suff {
            n: sl.n + sr.n,
            sum: sl.sum + sr.sum,
        };
        let tree = &self.trees[j].tree;
        let sibling_is_leaf = tree.parent(leaf).is_some_and(|p| {
            let (l, r) = tree.children(p).expect("parent is a split");
            tree.is_leaf(if l == leaf { r } else { l })
        });
        let w2_after = tree.num_prunable() - usize::from(sibling_is_leaf) + 1;
        let p_grow = if tree.is_stump() { 1.0 } else { P_GROW };
        let log_ratio = self.lml(sl) + self.lml(sr) - self.lml(parent)
            + self.log_split_prior(tree.depth(leaf))
            + P_PRUNE.ln()
            - (w2_after as f64).ln()
            - p_grow.ln()
            + (b as f64).ln();
        if self.rng.random::<f64>().ln() < log_ratio {
            self.stats.grow_accepted += 1;
            let rule = self.design.rule(v, k);
            let ts = &mut self.trees[j];
            let (l, r) = ts.tree.grow(leaf, rule);
            let bins = &self.design.bins[v];
            for (row, slot) in ts.leaf_of.iter_mut().enumerate() {
                if *slot as usize == leaf {
                    *slot = if bins[row] <= k { l as u32 } else { r as u32 };
                }
            }
        }
    }

    fn propose_prune(&mut self, j: usize) {
        self.stats.prune_proposed += 1;
        let tree = &self.trees[j].tree;
        let candidates = tree.prunable();
        let w2 = candidates.len();
        let node = candidates[self.rng.random_range(0..w2)];
        let (l, r) = tree.children(node).expect("prunable node is a split");
        let rows = self.rows_in(j, l, r);
        let mut sl = Suff::default();
        let mut sr = Suff::default();
        {
            let leaf_of = &self.trees[j].leaf_of;
            for &row in &rows {
                let res = self.resid[row as usize];
                if leaf_of[row as usize] as usize == l {
                    sl.add(res);
                } else {
                    sr.add(res);
                }
            }
        }
        let merged = Suff {
            n: sl.n + sr.n,
            sum: sl.sum + sr.sum,
        };
        let tree = &self.trees[j].tree;
        let leaves_after = tree.num_leaves() - 1;
        let p_grow_after = if node == ROOT { 1.0 } else { P_GROW };
        let log_ratio = self.lml(merged) - self.lml(sl) - self.lml(sr)
            - self.log_split_prior(tree.depth(node))
            + p_grow_after.ln()
            - (leaves_after as f64).ln()
            - P_PRUNE.ln()
            + (w2 as f64).ln();
        if self.rng.random::<f64>().ln() < log_ratio {
            self.stats.prune_accepted += 1;
            let ts = &mut self.trees[j];
            ts.tree.prune(node, 0.0);
            for slot in ts.leaf_of.iter_mut() {
                let s = *slot as usize;
                if s == l || s == r {
                    *slot = node as u32;
                }
            }
        }
    }

    fn propose_change(&mut self, j: usize) {
        self.stats.change_proposed += 1;
        let tree = &self.trees[j].tree;
        let candidates = tree.prunable();
        let node = candidates[self.rng.random_range(0..candidates.len())];
        let (l, r) = tree.children(node).expect("prunable node is a split");
        let rows = self.rows_in(j, l, r);
        let avail = self.design.splittable_vars(&rows);
        let v = avail[self.rng.random_range(0..avail.len())];
        let (lo, hi) = self.design.bin_range(v, &rows);
        let k = self.rng.random_range(lo..hi);
        let (nl, nr) = self.split_suff(&rows, v, k);
        let mut ol = Suff::default();
        let mut or = Suff::default();
        {
            let leaf_of = &self.trees[j].leaf_of;
            for &row in &rows {
                let res = self.resid[row as usize];
                if leaf_of[row as usize] as usize == l {
                    ol.add(res);
                } else {
                    or.add(res);
                }
            }
        }
        let log_ratio = self.lml(nl) + self.lml(nr) - self.lml(ol) - self.lml(or);
        if self.rng.random::<f64>().ln() < log_ratio {
            self.stats.change_accepted += 1;
            let rule = self.design.rule(v, k);
            let ts = &mut self.trees[j];
            ts.tree.set_rule(node, rule);
            let bins = &self.design.bins[v];
            for (row, slot) in ts.leaf_of.iter_mut().enumerate() {
                let s = *slot as usize;
                if s == l || s == r {
                    *slot = if bins[row] <= k { l as u32 } else { r as u32 };
                }
            }
        }
    }

    fn draw_leaves(&mut self, j: usize) {
        let leaves = self.trees[j].tree.leaves();
        let max_id = leaves.iter().copied().max().unwrap_or(0);
        let mut suff = vec![Suff::default(); max_id + 1];
        let leaf_of = &self.trees[j].leaf_of;
        for i in 0..self.n() {
            suff[leaf_of[i] as usize].add(self.resid[i]);
        }
        for leaf in leaves {
            let s = suff[leaf];
            let v = draw_leaf_value(s.n, s.sum, self.sigma2, self.sigma_mu2, &mut self.rng);
            self.trees[j].tree.set_value(leaf, v);
        }
    }

    /// Contrast `m(1, x_i) - m(0, x_i)` on the log-time scale.
    pub fn theta(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for ts in &self.trees {
            let (t1, t0) = ts.leaf_of[n..].split_at(n);
            for i in 0..n {
                out[i] += ts.tree.value(t1[i] as usize) - ts.tree.value(t0[i] as usize);
            }
        }
        out.iter_mut().for_each(|v| *v *= self.scale);
        out
    }

    /// Fitted `m(A_i, x_i)` on the log-time scale.
    pub fn fitted(&self) -> Vec<f64> {
        self.fit.iter().map(|f| f * self.scale + self.offset).collect()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt() * self.scale
    }

    pub fn stats(&self) -> AcceptanceStats {
        self.stats
    }

    pub fn trees(&self) -> impl Iterator<Item = &RegressionTree> {
        self.trees.iter().map(|t| &t.tree)
    }

    /// Largest `|fit_i - sum_j g_j(x_i)|` with the sum taken in tree order.
    pub fn sum_identity_gap(&self) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| {
                let s = self
                    .trees
                    .iter()
                    .fold(0.0, |acc, ts| acc + ts.tree.value(ts.leaf_of[i] as usize));
                (s - self.fit[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Smallest `z_i - lower_i` over censored rows; `+inf` when none.
    pub fn min_imputation_margin(&self) -> f64 {
        self.z
            .iter()
            .zip(&self.lower)
            .filter(|(_, l)| **l > f64::NEG_INFINITY)
            .map(|(z, l)| z - l)
            .fold(f64::INFINITY, f64::min)
    }

    /// Leaf routing agrees with direct prediction on the split values.
    pub fn routing_consistent(&self, x: &Matrix, a: &[u8]) -> bool {
        let n = self.n();
        self.trees.iter().all(|ts| {
            (0..n).all(|i| {
                let leaf = ts.tree.route_by(|v| if v == 0 { f64::from(a[i]) } else { x.get(i, v - 1) });
                leaf == ts.leaf_of[i] as usize
            })
        })
    }
}

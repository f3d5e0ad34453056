//! Propensity ensemble: logistic regression, additive spline logistic
//! regression and a probability forest, blended by covariate balance.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::forest::{ForestParams, RegressionForest};
use crate::matrix::Matrix;
use crate::stats::{logistic, quantile_sorted};
use crate::{Error, Result};

pub const CLAMP_LO: f64 = 0.01;
pub const CLAMP_HI: f64 = 0.99;
pub const RIDGE_FALLBACK: f64 = 1e-4;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
/// A standardized coefficient beyond this is treated as separation.
const DIVERGENCE_BOUND: f64 = 50.0;
const GRID_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
enum ColumnBasis {
    Linear,
    /// Natural cubic spline with knots `xi[0] < ... < xi[K-1]`.
    Natural(Vec<f64>),
}

impl ColumnBasis {
    fn width(&self) -> usize {
        match self {
            ColumnBasis::Linear => 1,
            ColumnBasis::Natural(xi) => xi.len() - 1,
        }
    }

    fn expand(&self, v: f64, out: &mut Vec<f64>) {
        out.push(v);
        if let ColumnBasis::Natural(xi) = self {
            let k = xi.len();
            let last = xi[k - 1];
            let d = |j: usize| {
                let c = |t: f64| (v - t).max(0.0).powi(3);
                (c(xi[j]) - c(last)) / (last - xi[j])
            };
            let d_pen = d(k - 2);
            for j in 0..k - 2 {
                out.push(d(j) - d_pen);
            }
        }
    }
}

fn spline_basis_for(col: &[f64]) -> ColumnBasis {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= 2 {
        return ColumnBasis::Linear;
    }
    let mut knots = vec![sorted[0]];
    knots.extend([0.2, 0.4, 0.6, 0.8].iter().map(|&p| quantile_sorted(&sorted, p)));
    knots.push(sorted[sorted.len() - 1]);
    knots.dedup();
    if knots.len() < 3 {
        ColumnBasis::Linear
    } else {
        ColumnBasis::Natural(knots)
    }
}

/// A fitted logistic model on a (possibly expanded) covariate basis.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    basis: Vec<ColumnBasis>,
    /// Expanded columns kept in the fit (constant ones are dropped).
    kept: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
    coef: Vec<f64>,
    pub separated: bool,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    fn expand_row(&self, x: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        for (b, &v) in self.basis.iter().zip(x) {
            b.expand(v, buf);
        }
    }

    fn linear_predictor(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.expand_row(x, buf);
        let mut eta = self.coef[0];
        for (k, &j) in self.kept.iter().enumerate() {
            eta += self.coef[k + 1] * (buf[j] - self.center[k]) / self.scale[k];
        }
        eta
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut buf = Vec::new();
        x.rows().map(|r| logistic(self.linear_predictor(r, &mut buf))).collect()
    }

    /// Intercept and per-column slopes on the original scale. Only meaningful
    /// for the linear basis.
    pub fn coefficients(&self) -> Vec<f64> {
        let width: usize = self.basis.iter().map(ColumnBasis::width).sum();
        let mut beta = vec![0.0; width + 1];
        beta[0] = self.coef[0];
        for (k, &j) in self.kept.iter().enumerate() {
            let slope = self.coef[k + 1] / self.scale[k];
            beta[j + 1] = slope;
            beta[0] -= slope * self.center[k];
        }
        beta
    }
}

fn check_inputs(x: &Matrix, a: &[u8]) -> Result<()> {
    let n = a.len();
    if x.nrows() != n {
        return Err(Error::Dimension(format!("{} covariate rows for {n} treatments", x.nrows())));
    }
    if n < x.ncols() + 1 {
        return Err(Error::TooSmall(format!("n = {n} with p = {}", x.ncols())));
    }
    if a.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput("treatment must be 0/1".into()));
    }
    if a.iter().all(|&v| v == a[0]) {
        return Err(Error::DegenerateTreatment);
    }
    for (i, row) in x.rows().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, what: "covariate" });
        }
    }
    Ok(())
}

fn neg_loglik(d: &DMatrix<f64>, y: &DVector<f64>, g: &DVector<f64>, ridge: f64) -> f64 {
    let eta = d * g;
    let mut nll = 0.0;
    for i in 0..y.len() {
        let e = eta[i];
        // log(1 + exp(e)) - y e, computed stably
        nll += e.max(0.0) + (-e.abs()).exp().ln_1p() - y[i] * e;
    }
    nll + 0.5 * ridge * g.rows(1, g.len() - 1).norm_squared()
}

struct IrlsOutcome {
    coef: DVector<f64>,
    converged: bool,
    iterations: usize,
}

fn irls(d: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> IrlsOutcome {
    let (n, q) = d.shape();
    let mut g = DVector::zeros(q);
    let mut nll = neg_loglik(d, y, &g, ridge);
    for it in 1..=IRLS_MAX_ITER {
        let eta = d * &g;
        let mut grad = DVector::zeros(q);
        let mut h = DMatrix::zeros(q, q);
        let mut wd = d.clone();
        for i in 0..n {
            let p = logistic(eta[i]);
            let w = (p * (1.0 - p)).max(1e-12);
            let r = y[i] - p;
            for j in 0..q {
                grad[j] += d[(i, j)] * r;
                wd[(i, j)] *= w;
            }
        }
        h.gemm_tr(1.0, d, &wd, 0.0);
        for j in 1..q {
            h[(j, j)] += ridge;
            grad[j] -= ridge * g[j];
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => {
                let jitter = 1e-8 * (h.trace() / q as f64).max(1e-12);
                for j in 0..q {
                    h[(j, j)] += jitter;
                }
                match h.cholesky() {
                    Some(c) => c.solve(&grad),
                    None => return IrlsOutcome { coef: g, converged: false, iterations: it },
                }
            }
        };
        let mut t = 1.0;
        let mut next = &g + &step * t;
        let mut next_nll = neg_loglik(d, y, &next, ridge);
        while next_nll > nll + 1e-12 * nll.abs().max(1.0) && t > 1e-6 {
            t *= 0.5;
            next = &g + &step * t;
            next_nll = neg_loglik(d, y, &next, ridge);
        }
        let change = (&next - &g).amax();
        g = next;
        nll = next_nll;
        if change < IRLS_TOL {
            return IrlsOutcome { coef: g, converged: true, iterations: it };
        }
    }
    IrlsOutcome { coef: g, converged: false, iterations: IRLS_MAX_ITER }
}

fn fit_on_basis(x: &Matrix, a: &[u8], basis: Vec<ColumnBasis>) -> Result<LogisticModel> {
    check_inputs(x, a)?;
    let n = a.len();
    let width: usize = basis.iter().map(ColumnBasis::width).sum();
    let mut expanded = vec![Vec::with_capacity(n); width];
    let mut buf = Vec::with_capacity(width);
    for r in x.rows() {
        buf.clear();
        for (b, &v) in basis.iter().zip(r) {
            b.expand(v, &mut buf);
        }
        for (col, &v) in expanded.iter_mut().zip(&buf) {
            col.push(v);
        }
    }
    let (mut kept, mut center, mut scale) = (Vec::new(), Vec::new(), Vec::new());
    for (j, col) in expanded.iter().enumerate() {
        let m = col.iter().sum::<f64>() / n as f64;
        let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        if s > 1e-12 * m.abs().max(1.0) {
            kept.push(j);
            center.push(m);
            scale.push(s);
        }
    }
    let q = kept.len() + 1;
    let d = DMatrix::from_fn(n, q, |i, k| {
        if k == 0 {
            1.0
        } else {
            (expanded[kept[k - 1]][i] - center[k - 1]) / scale[k - 1]
        }
    });
    let y = DVector::from_iterator(n, a.iter().map(|&v| v as f64));
    let mut out = irls(&d, &y, 0.0);
    let mut separated = false;
    if !out.converged || out.coef.amax() > DIVERGENCE_BOUND {
        separated = true;
        out = irls(&d, &y, RIDGE_FALLBACK);
    }
    Ok(LogisticModel {
        basis,
        kept,
        center,
        scale,
        coef: out.coef.iter().copied().collect(),
        separated,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Main-effects logistic regression fitted by IRLS.
pub fn fit_logistic_model(x: &Matrix, a: &[u8]) -> Result<LogisticModel> {
    fit_on_basis(x, a, vec![ColumnBasis::Linear; x.ncols()])
}

/// Additive logistic regression: each continuous covariate is expanded into
/// a natural cubic spline with interior knots at its quintiles.
pub fn fit_spline_logistic_model(x: &Matrix, a: &[u8]) -> Result<LogisticModel> {
    let basis = x.columns().iter().map(|c| spline_basis_for(c)).collect();
    fit_on_basis(x, a, basis)
}

pub fn fit_logistic(x: &Matrix, a: &[u8]) -> Result<Vec<f64>> {
    Ok(fit_logistic_model(x, a)?.predict(x))
}

pub fn fit_spline_logistic(x: &Matrix, a: &[u8]) -> Result<Vec<f64>> {
    Ok(fit_spline_logistic_model(x, a)?.predict(x))
}

pub fn probability_forest_params(p: usize) -> ForestParams {
    ForestParams {
        num_trees: 200,
        sample_fraction: 0.5,
        min_node_size: 10,
        mtry: Some(((p as f64).sqrt().ceil() as usize).max(1)),
        imbalance: 0.0,
    }
}

/// Out-of-bag class probabilities from a probability forest.
pub fn fit_probability_forest(x: &Matrix, a: &[u8], seed: u64) -> Result<Vec<f64>> {
    check_inputs(x, a)?;
    let y: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let forest = RegressionForest::fit(x, &y, &probability_forest_params(x.ncols()), seed)?;
    Ok(forest.oob_predict(x))
}

pub fn clamp_propensity(e: f64) -> f64 {
    e.clamp(CLAMP_LO, CLAMP_HI)
}

/// Inverse-probability-of-treatment weights `A/e + (1-A)/(1-e)`.
pub fn ipw_weights(a: &[u8], e: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(e)
        .map(|(&t, &e)| if t == 1 { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect()
}

/// Standardized mean difference of one covariate between treatment arms,
/// with weighted means and weighted (population) variances.
pub fn weighted_smd(x: &[f64], a: &[u8], w: &[f64]) -> f64 {
    let moments = |arm: u8| {
        let (mut sw, mut sx) = (0.0, 0.0);
        for ((&v, &t), &wi) in x.iter().zip(a).zip(w) {
            if t == arm {
                sw += wi;
                sx += wi * v;
            }
        }
        let m = sx / sw;
        let mut ss = 0.0;
        for ((&v, &t), &wi) in x.iter().zip(a).zip(w) {
            if t == arm {
                ss += wi * (v - m) * (v - m);
            }
        }
        (m, ss / sw)
    };
    let (m1, v1) = moments(1);
    let (m0, v0) = moments(0);
    let pooled = (0.5 * (v1 + v0)).sqrt();
    if pooled <= 0.0 || !pooled.is_finite() {
        0.0
    } else {
        (m1 - m0) / pooled
    }
}

/// Largest absolute IPW-weighted SMD across covariates.
pub fn max_abs_smd(cols: &[Vec<f64>], a: &[u8], e: &[f64]) -> f64 {
    let w = ipw_weights(a, e);
    cols.iter()
        .map(|c| weighted_smd(c, a, &w).abs())
        .fold(0.0, f64::max)
}

fn blend(learner_probs: &[Vec<f64>; 3], w: &[f64; 3]) -> Vec<f64> {
    (0..learner_probs[0].len())
        .map(|i| clamp_propensity((0..3).map(|k| w[k] * learner_probs[k][i]).sum()))
        .collect()
}

/// Grid search over the simplex (step 0.05) for the blend with the smallest
/// maximum weighted SMD. Near-ties go to the weights closest to uniform.
pub fn solve_ensemble_weights(learner_probs: &[Vec<f64>; 3], x: &Matrix, a: &[u8]) -> Result<[f64; 3]> {
    let n = a.len();
    if learner_probs.iter().any(|p| p.len() != n) || x.nrows() != n {
        return Err(Error::Dimension("learner probabilities and data disagree".into()));
    }
    let cols = x.columns();
    let mut best: Option<(f64, f64, [f64; 3])> = None;
    for i in 0..=GRID_STEPS {
        for j in 0..=GRID_STEPS - i {
            let k = GRID_STEPS - i - j;
            let w = [
                i as f64 / GRID_STEPS as f64,
                j as f64 / GRID_STEPS as f64,
                k as f64 / GRID_STEPS as f64,
            ];
            let obj = max_abs_smd(&cols, a, &blend(learner_probs, &w));
            let spread: f64 = w.iter().map(|v| (v - 1.0 / 3.0).powi(2)).sum();
            let better = match best {
                None => true,
                Some((b, s, _)) => {
                    let tol = 1e-12 * b.abs().max(1.0);
                    obj < b - tol || (obj <= b + tol && spread < s)
                }
            };
            if better {
                best = Some((obj, spread, w));
            }
        }
    }
    Ok(best.expect("grid is non-empty").2)
}

pub fn augment(x: &Matrix, ehat: &[f64]) -> Result<Matrix> {
    x.with_column(ehat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmdRow {
    pub covariate: String,
    pub unweighted_smd: f64,
    pub weighted_smd: f64,
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Logistic, spline logistic and forest probabilities, in that order.
    pub learner_probs: [Vec<f64>; 3],
    pub weights: [f64; 3],
    pub ehat: Vec<f64>,
    pub smd_report: Vec<SmdRow>,
    pub separation: bool,
}

impl PropensityFit {
    pub fn max_weighted_smd(&self) -> f64 {
        self.smd_report
            .iter()
            .map(|r| r.weighted_smd.abs())
            .fold(0.0, f64::max)
    }

    pub fn write_smd_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "covariate,unweighted_smd,weighted_smd")?;
        for r in &self.smd_report {
            writeln!(out, "{},{},{}", r.covariate, r.unweighted_smd, r.weighted_smd)?;
        }
        Ok(())
    }
}

pub fn smd_report(x: &Matrix, a: &[u8], ehat: &[f64]) -> Vec<SmdRow> {
    let ones = vec![1.0; a.len()];
    let w = ipw_weights(a, ehat);
    x.columns()
        .iter()
        .enumerate()
        .map(|(j, c)| SmdRow {
            covariate: format!("x{}", j + 1),
            unweighted_smd: weighted_smd(c, a, &ones),
            weighted_smd: weighted_smd(c, a, &w),
        })
        .collect()
}

/// Fits the three learners, solves the balance weights and blends.
pub fn fit_propensity(x: &Matrix, a: &[u8], seed: u64) -> Result<PropensityFit> {
    check_inputs(x, a)?;
    let ((glm, gam), forest) = rayon::join(
        || (fit_logistic_model(x, a), fit_spline_logistic_model(x, a)),
        || fit_probability_forest(x, a, seed),
    );
    let (glm, gam, forest) = (glm?, gam?, forest?);
    let separation = glm.separated || gam.separated;
    let learner_probs = [glm.predict(x), gam.predict(x), forest];
    let weights = solve_ensemble_weights(&learner_probs, x, a)?;
    let ehat = blend(&learner_probs, &weights);
    let smd_report = smd_report(x, a, &ehat);
    Ok(PropensityFit {
        learner_probs,
        weights,
        ehat,
        smd_report,
        separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn logistic_data(n: usize, beta: &[f64], seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = stream_rng(seed, 0);
        let p = beta.len() - 1;
        let mut x = Matrix::zeros(n, p);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            let mut eta = beta[0];
            for j in 0..p {
                let v: f64 = StandardNormal.sample(&mut rng);
                x.set(i, j, v);
                eta += beta[j + 1] * v;
            }
            a.push((rng.random::<f64>() < logistic(eta)) as u8);
        }
        (x, a)
    }

    fn log_loss(p: &[f64], a: &[u8]) -> f64 {
        p.iter()
            .zip(a)
            .map(|(&p, &t)| if t == 1 { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / p.len() as f64
    }

    #[test]
    fn constant_covariate_gives_half() {
        let x = Matrix::from_row_major(6, 1, vec![3.0; 6]).unwrap();
        let a = [1, 0, 1, 0, 1, 0];
        for p in fit_logistic(&x, &a).unwrap() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_logistic_coefficients() {
        let truth = [-0.3, 0.8, -0.5, 0.2];
        let (x, a) = logistic_data(100_000, &truth, 11);
        let m = fit_logistic_model(&x, &a).unwrap();
        assert!(m.converged && !m.separated);
        for (b, t) in m.coefficients().iter().zip(truth) {
            assert!((b - t).abs() < 0.05, "{b} vs {t}");
        }
    }

    #[test]
    fn degenerate_treatment_rejected() {
        let x = Matrix::from_row_major(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(fit_logistic(&x, &[1, 1, 1, 1]), Err(Error::DegenerateTreatment)));
        assert!(matches!(fit_spline_logistic(&x, &[0; 4]), Err(Error::DegenerateTreatment)));
    }

    #[test]
    fn separation_falls_back_to_ridge() {
        let x = Matrix::from_row_major(8, 1, (0..8).map(|v| v as f64).collect()).unwrap();
        let a = [0, 0, 0, 0, 1, 1, 1, 1];
        let m = fit_logistic_model(&x, &a).unwrap();
        assert!(m.separated);
        let p = m.predict(&x);
        assert!(p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(p[0] < 0.01 && p[7] > 0.99);
    }

    #[test]
    fn spline_equals_logistic_on_binary_covariates() {
        let mut rng = stream_rng(5, 0);
        let n = 500;
        let mut x = Matrix::zeros(n, 3);
        let mut a = Vec::new();
        for i in 0..n {
            for j in 0..3 {
                x.set(i, j, (rng.random::<f64>() < 0.5) as u8 as f64);
            }
            a.push((rng.random::<f64>() < logistic(x.get(i, 0) - 0.5 * x.get(i, 2))) as u8);
        }
        let p1 = fit_logistic(&x, &a).unwrap();
        let p2 = fit_spline_logistic(&x, &a).unwrap();
        for (u, v) in p1.iter().zip(&p2) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn natural_spline_is_linear_beyond_boundary() {
        let b = ColumnBasis::Natural(vec![0.0, 0.2, 0.5, 0.7, 0.9, 1.0]);
        let eval = |v: f64| {
            let mut out = Vec::new();
            b.expand(v, &mut out);
            out
        };
        let (f2, f3, f4) = (eval(2.0), eval(3.0), eval(4.0));
        for k in 0..f2.len() {
            let second_diff = f4[k] - 2.0 * f3[k] + f2[k];
            assert!(second_diff.abs() < 1e-9, "column {k}: {second_diff}");
        }
        let (g1, g2, g3) = (eval(-3.0), eval(-2.0), eval(-1.0));
        for k in 0..g1.len() {
            assert!((g3[k] - 2.0 * g2[k] + g1[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn spline_beats_logistic_on_sine_index() {
        let gen = |seed: u64| {
            let mut rng = stream_rng(seed, 0);
            let n = 10_000;
            let mut x = Matrix::zeros(n, 2);
            let mut a = Vec::new();
            for i in 0..n {
                let x1 = rng.random_range(-1.5..1.5);
                x.set(i, 0, x1);
                x.set(i, 1, rng.random::<f64>());
                a.push((rng.random::<f64>() < logistic((3.0 * x1).sin())) as u8);
            }
            (x, a)
        };
        let (xtr, atr) = gen(1);
        let (xte, ate) = gen(2);
        let glm = fit_logistic_model(&xtr, &atr).unwrap().predict(&xte);
        let gam = fit_spline_logistic_model(&xtr, &atr).unwrap().predict(&xte);
        assert!(log_loss(&gam, &ate) < log_loss(&glm, &ate));
    }

    #[test]
    fn forest_recovers_step_propensity() {
        let mut rng = stream_rng(8, 0);
        let n = 10_000;
        let mut x = Matrix::zeros(n, 4);
        let mut a = Vec::new();
        for i in 0..n {
            for j in 0..4 {
                x.set(i, j, rng.random::<f64>());
            }
            let e = if x.get(i, 0) < 0.5 { 0.25 } else { 0.75 };
            a.push((rng.random::<f64>() < e) as u8);
        }
        let p = fit_probability_forest(&x, &a, 3).unwrap();
        assert_eq!(p, fit_probability_forest(&x, &a, 3).unwrap());
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        for (lo, hi, e) in [(0.0, 0.4, 0.25), (0.6, 1.0, 0.75)] {
            let errs: Vec<f64> = (0..n)
                .filter(|&i| (lo..hi).contains(&x.get(i, 0)))
                .map(|i| p[i] - e)
                .collect();
            let bias = errs.iter().sum::<f64>() / errs.len() as f64;
            let mae = errs.iter().map(|v| v.abs()).sum::<f64>() / errs.len() as f64;
            assert!(bias.abs() < 0.03 && mae < 0.1, "level {e}: bias {bias} mae {mae}");
        }
    }

    #[test]
    fn smd_matches_hand_computation() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let a = [1, 1, 0, 0];
        // arm means 1.5 and 4, variances 0.25 and 1
        let expect = (1.5 - 4.0) / (0.625f64).sqrt();
        assert!((weighted_smd(&x, &a, &[1.0; 4]) - expect).abs() < 1e-12);
        let w = [3.0, 1.0, 1.0, 1.0];
        // arm one: mean 1.25, var (3*0.0625 + 0.5625)/4 = 0.1875
        let expect = (1.25 - 4.0) / (0.5f64 * (0.1875 + 1.0)).sqrt();
        assert!((weighted_smd(&x, &a, &w) - expect).abs() < 1e-12);
    }

    #[test]
    fn smd_of_independent_covariate_shrinks() {
        let mut rng = stream_rng(21, 0);
        let mut last = f64::INFINITY;
        for n in [1_000, 100_000] {
            let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a: Vec<u8> = (0..n).map(|_| rng.random::<bool>() as u8).collect();
            let s = weighted_smd(&x, &a, &vec![1.0; n]).abs();
            assert!(s < last.max(0.1));
            last = s;
        }
        assert!(last < 0.02);
    }

    #[test]
    fn tie_rule_prefers_uniform_split() {
        let (x, a) = logistic_data(2000, &[0.0, 1.0], 4);
        let good = fit_logistic(&x, &a).unwrap();
        let bad = vec![0.5; 2000];
        let w = solve_ensemble_weights(&[good.clone(), good, bad], &x, &a).unwrap();
        assert!((w[0] - w[1]).abs() < 1e-12, "{w:?}");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn true_propensity_vertex_balances_best() {
        let truth = [0.2, 0.5, -0.4];
        let (x, a) = logistic_data(100_000, &truth, 31);
        let e_true: Vec<f64> = x
            .rows()
            .map(|r| logistic(truth[0] + truth[1] * r[0] + truth[2] * r[1]))
            .collect();
        let rate = a.iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64;
        let flat = vec![rate; a.len()];
        let skew: Vec<f64> = x.rows().map(|r| logistic(0.3 * r[0])).collect();
        let w = solve_ensemble_weights(&[flat, e_true, skew], &x, &a).unwrap();
        assert_eq!(w, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn augment_appends_column() {
        let x = Matrix::zeros(3, 15);
        let e = [0.2, 0.4, 0.6];
        let aug = augment(&x, &e).unwrap();
        assert_eq!(aug.ncols(), 16);
        assert_eq!(aug.column(15), e.to_vec());
        assert_eq!(augment(&aug, &e).unwrap().ncols(), 17);
        assert_eq!(x.ncols(), 15);
    }

    #[test]
    fn fit_invariants() {
        let (x, a) = logistic_data(800, &[0.0, 0.7, -0.4, 0.3], 17);
        let f = fit_propensity(&x, &a, 2).unwrap();
        assert!((f.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.weights.iter().all(|&w| w >= 0.0));
        for i in 0..800 {
            let raw: f64 = (0..3).map(|k| f.weights[k] * f.learner_probs[k][i]).sum();
            assert_eq!(f.ehat[i], clamp_propensity(raw));
        }
        let mut csv = Vec::new();
        f.write_smd_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("covariate,unweighted_smd,weighted_smd\nx1,"));
        assert_eq!(text.lines().count(), 4);
    }
}

//! Doubly robust pseudo-outcomes for the horizon-restricted log survival time.

use rand::seq::SliceRandom;

use crate::forest::{ForestParams, RegressionForest, IMBALANCE_ALPHA};
use crate::matrix::Matrix;
use crate::propensity::{CLAMP_HI, CLAMP_LO};
use crate::rng::{child_seed, stream_rng};
use crate::stats::{quantile, pairwise_sum};
use crate::{Error, Result};

pub const CROSS_FIT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    pub ehat: Vec<f64>,
    /// `S_C(min(Y_i, h)- | x_i)`.
    pub s_c: Vec<f64>,
    /// Cross-fit `E[U | A = 0, x]` and `E[U | A = 1, x]`.
    pub mhat: [Vec<f64>; 2],
    pub horizon: f64,
}

impl NuisanceSet {
    pub fn tau_hat(&self, i: usize) -> f64 {
        self.mhat[1][i] - self.mhat[0][i]
    }
}

/// Empirical quantile of the observed times used as the horizon.
pub fn horizon(y: &[f64], q: f64) -> f64 {
    quantile(y, q)
}

/// `U = min(log Y, log h)` and the completeness indicator.
pub fn transformed_outcome(y: &[f64], delta: &[u8], h: f64) -> (Vec<f64>, Vec<bool>) {
    y.iter()
        .zip(delta)
        .map(|(&yi, &d)| (yi.min(h).ln(), d == 1 || yi >= h))
        .unzip()
}

pub fn outcome_forest_params(p: usize) -> ForestParams {
    ForestParams {
        num_trees: 200,
        sample_fraction: 0.5,
        min_node_size: 5,
        mtry: Some((((p as f64).sqrt() + 20.0).ceil() as usize).min(p).max(1)),
        imbalance: IMBALANCE_ALPHA,
    }
}

/// Cross-fit regression forests of `U` on complete cases, one per arm.
/// Returns out-of-fold predictions of `m_0` and `m_1` for every row.
pub fn cross_fit_outcome_models(
    x: &Matrix,
    u: &[f64],
    complete: &[bool],
    a: &[u8],
    seed: u64,
) -> Result<[Vec<f64>; 2]> {
    let n = u.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, 0));
    let mut fold = vec![0usize; n];
    for (k, &r) in perm.iter().enumerate() {
        fold[r] = k % CROSS_FIT_FOLDS;
    }
    let params = outcome_forest_params(x.ncols());
    let mut out = [vec![0.0; n], vec![0.0; n]];
    for arm in 0..2u8 {
        let arm_rows: Vec<usize> = (0..n).filter(|&i| complete[i] && a[i] == arm).collect();
        let fallback = if arm_rows.is_empty() {
            let all: Vec<f64> = (0..n).filter(|&i| complete[i]).map(|i| u[i]).collect();
            if all.is_empty() {
                return Err(Error::NoEvents);
            }
            pairwise_sum(&all) / all.len() as f64
        } else {
            let v: Vec<f64> = arm_rows.iter().map(|&i| u[i]).collect();
            pairwise_sum(&v) / v.len() as f64
        };
        for f in 0..CROSS_FIT_FOLDS {
            let train: Vec<usize> = arm_rows.iter().copied().filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            if train.is_empty() {
                for &i in &test {
                    out[arm as usize][i] = fallback;
                }
                continue;
            }
            let yt: Vec<f64> = train.iter().map(|&i| u[i]).collect();
            let forest = RegressionForest::fit(
                &x.select_rows(&train),
                &yt,
                &params,
                child_seed(seed, 1 + arm as u64 * CROSS_FIT_FOLDS as u64 + f as u64),
            )?;
            for (&i, v) in test.iter().zip(forest.predict(&x.select_rows(&test))) {
                out[arm as usize][i] = v;
            }
        }
    }
    Ok(out)
}

/// `Gamma_i = tau(x_i) + (A_i - e_i) / (e_i (1 - e_i)) * w_i * (U_i - m_{A_i}(x_i))`
/// with `w_i = Delta_i / S_C(min(Y_i, h)- | x_i)`.
pub fn compute_pseudo_outcomes(y: &[f64], delta: &[u8], a: &[u8], nuisance: &NuisanceSet) -> Result<Vec<f64>> {
    let n = y.len();
    if [delta.len(), a.len(), nuisance.ehat.len(), nuisance.s_c.len(), nuisance.mhat[0].len(), nuisance.mhat[1].len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::Dimension("pseudo-outcome inputs disagree in length".into()));
    }
    if !(nuisance.horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    for (i, &e) in nuisance.ehat.iter().enumerate() {
        if !(CLAMP_LO..=CLAMP_HI).contains(&e) {
            return Err(Error::Positivity { row: i, value: e });
        }
    }
    let (u, complete) = transformed_outcome(y, delta, nuisance.horizon);
    Ok((0..n)
        .map(|i| {
            let e = nuisance.ehat[i];
            let w = if complete[i] { 1.0 / nuisance.s_c[i] } else { 0.0 };
            let m_a = nuisance.mhat[a[i] as usize][i];
            let tau = nuisance.tau_hat(i);
            if w == 0.0 {
                tau
            } else {
                tau + (a[i] as f64 - e) / (e * (1.0 - e)) * w * (u[i] - m_a)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn plain_nuisance(n: usize, h: f64) -> NuisanceSet {
        NuisanceSet {
            ehat: vec![0.5; n],
            s_c: vec![1.0; n],
            mhat: [vec![0.0; n], vec![0.0; n]],
            horizon: h,
        }
    }

    #[test]
    fn reduces_to_signed_outcome() {
        let y = [1.5, 2.0, 0.5, 3.0];
        let a = [1, 0, 1, 0];
        let g = compute_pseudo_outcomes(&y, &[1; 4], &a, &plain_nuisance(4, 10.0)).unwrap();
        for i in 0..4 {
            let expect = 2.0 * (2.0 * a[i] as f64 - 1.0) * y[i].ln();
            assert!((g[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn early_censoring_gives_tau() {
        let mut nu = plain_nuisance(3, 5.0);
        nu.mhat = [vec![0.1, 0.2, 0.3], vec![0.5, 0.1, 0.9]];
        let g = compute_pseudo_outcomes(&[1.0, 2.0, 6.0], &[0, 0, 0], &[1, 0, 1], &nu).unwrap();
        assert_eq!(g[0], 0.5 - 0.1);
        assert_eq!(g[1], 0.1 - 0.2);
        // censored beyond the horizon counts as complete
        assert_ne!(g[2], 0.9 - 0.3);
    }

    #[test]
    fn positivity_violation_is_an_error() {
        let mut nu = plain_nuisance(2, 5.0);
        nu.ehat[1] = 0.001;
        let err = compute_pseudo_outcomes(&[1.0, 2.0], &[1, 1], &[1, 0], &nu).unwrap_err();
        assert!(err.to_string().contains("positivity violation"));
    }

    #[test]
    fn aipw_mean_is_unbiased() {
        // log T = 1 + x + A * (0.5 + x) + noise, x ~ U(0,1): ATE = 1.0
        let n = 20_000;
        let mut rng = stream_rng(3, 0);
        let mut x = Matrix::zeros(n, 1);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let xi: f64 = rng.random();
            x.set(i, 0, xi);
            let ai = (rng.random::<f64>() < 0.5) as u8;
            let z: f64 = StandardNormal.sample(&mut rng);
            a.push(ai);
            y.push((1.0 + xi + ai as f64 * (0.5 + xi) + 0.5 * z).exp());
        }
        let delta = vec![1u8; n];
        let h = y.iter().cloned().fold(0.0, f64::max) * 2.0;
        let (u, complete) = transformed_outcome(&y, &delta, h);
        let mhat = cross_fit_outcome_models(&x, &u, &complete, &a, 9).unwrap();
        let nu = NuisanceSet {
            ehat: vec![0.5; n],
            s_c: vec![1.0; n],
            mhat,
            horizon: h,
        };
        let g = compute_pseudo_outcomes(&y, &delta, &a, &nu).unwrap();
        let m = pairwise_sum(&g) / n as f64;
        let se = crate::stats::sd(&g) / (n as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m} se {se}");
    }
}

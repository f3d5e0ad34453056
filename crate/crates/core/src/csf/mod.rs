//! Causal survival forest for the log survival time contrast.

mod censoring;
mod honest;
mod pseudo;

pub use censoring::{
    fit_censoring_survival, fit_censoring_survival_with, CensoringParams, CensoringSurvival, SURVIVAL_FLOOR,
};
pub use honest::{grow_forest, CausalSurvivalForest, HonestTree, VARIANCE_FLOOR};
pub use pseudo::{
    compute_pseudo_outcomes, cross_fit_outcome_models, horizon, outcome_forest_params, transformed_outcome,
    NuisanceSet, CROSS_FIT_FOLDS,
};

use crate::matrix::Matrix;
use crate::rng::child_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsfHyperparams {
    pub num_trees: usize,
    pub min_node_size: usize,
    pub subsample_fraction: f64,
    pub honesty_fraction: f64,
    /// `None` means `min(ceil(sqrt(p) + 20), p)`.
    pub mtry: Option<usize>,
    /// Trees per little bag.
    pub bag_size: usize,
    pub horizon_quantile: f64,
}

impl Default for CsfHyperparams {
    fn default() -> Self {
        Self {
            num_trees: 2000,
            min_node_size: 5,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            mtry: None,
            bag_size: 50,
            horizon_quantile: 0.95,
        }
    }
}

impl CsfHyperparams {
    pub fn improved() -> Self {
        Self {
            min_node_size: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if self.min_node_size < 1 {
            return Err(Error::InvalidInput("min_node_size must be at least 1".into()));
        }
        if !frac(self.subsample_fraction) || !frac(self.honesty_fraction) || !frac(self.horizon_quantile) {
            return Err(Error::InvalidInput("fractions must lie in (0, 1)".into()));
        }
        if self.bag_size < 1 || self.num_trees == 0 || !self.num_trees.is_multiple_of(self.bag_size) {
            return Err(Error::InvalidInput(format!(
                "num_trees {} not divisible by bag_size {}",
                self.num_trees, self.bag_size
            )));
        }
        if self.mtry == Some(0) {
            return Err(Error::InvalidInput("mtry must be positive".into()));
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((p as f64).sqrt() + 20.0).ceil() as usize)
            .min(p)
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsfEstimate {
    pub theta_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
}

impl CsfEstimate {
    pub fn from_se(theta_hat: Vec<f64>, se: Vec<f64>) -> Self {
        let ci = theta_hat.iter().zip(&se).map(|(t, s)| (t - 1.96 * s, t + 1.96 * s)).collect();
        Self { theta_hat, se, ci }
    }
}

#[derive(Debug, Clone)]
pub struct CsfFit {
    pub estimate: CsfEstimate,
    pub nuisance: NuisanceSet,
    pub pseudo_outcomes: Vec<f64>,
    pub forest: CausalSurvivalForest,
    /// True when no observation was censored.
    pub no_censoring: bool,
}

/// Nuisances, pseudo-outcomes, forest and out-of-bag estimates in one call.
/// `x_aug` should already carry the propensity column; `ehat` is the same
/// estimate.
pub fn fit_csf(
    x_aug: &Matrix,
    a: &[u8],
    y: &[f64],
    delta: &[u8],
    ehat: &[f64],
    hyper: &CsfHyperparams,
    seed: u64,
) -> Result<CsfFit> {
    hyper.validate()?;
    let n = y.len();
    if [a.len(), delta.len(), ehat.len(), x_aug.nrows()].iter().any(|&l| l != n) {
        return Err(Error::Dimension("inputs disagree in length".into()));
    }
    if n == 0 {
        return Err(Error::TooSmall("empty data".into()));
    }
    if let Some(i) = y.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonFinite { row: i, what: "time" });
    }
    if !delta.contains(&1) {
        return Err(Error::NoEvents);
    }
    if a.iter().all(|&v| v == a[0]) {
        return Err(Error::DegenerateTreatment);
    }
    let h = horizon(y, hyper.horizon_quantile);
    let censoring = fit_censoring_survival(x_aug, y, delta, child_seed(seed, 1))?;
    let s_c = censoring.oob_survival(x_aug, &y.iter().map(|&v| v.min(h)).collect::<Vec<_>>());
    let (u, complete) = transformed_outcome(y, delta, h);
    let mhat = cross_fit_outcome_models(x_aug, &u, &complete, a, child_seed(seed, 2))?;
    let nuisance = NuisanceSet {
        ehat: ehat.to_vec(),
        s_c,
        mhat,
        horizon: h,
    };
    let pseudo_outcomes = compute_pseudo_outcomes(y, delta, a, &nuisance)?;
    let forest = grow_forest(x_aug, &pseudo_outcomes, hyper, child_seed(seed, 3))?;
    let estimate = forest.predict_oob(x_aug);
    Ok(CsfFit {
        estimate,
        nuisance,
        pseudo_outcomes,
        forest,
        no_censoring: censoring.no_censoring,
    })
}

pub fn csf_estimate_ite(
    x_aug: &Matrix,
    a: &[u8],
    y: &[f64],
    delta: &[u8],
    ehat: &[f64],
    hyper: &CsfHyperparams,
    seed: u64,
) -> Result<CsfEstimate> {
    Ok(fit_csf(x_aug, a, y, delta, ehat, hyper, seed)?.estimate)
}

#[cfg(test)]
mod tests;

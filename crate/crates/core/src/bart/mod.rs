//! Semiparametric accelerated-failure-time sum-of-trees model.
//!
//! `log T = m(A, x) + W` with `m` a sum of `J` regression trees and Gaussian
//! `W`. Right-censored log times are imputed from truncated normals at each
//! sweep, so the tree and variance updates see complete data.

mod conditionals;
mod posterior;
mod sampler;
mod tree;
mod truncnorm;

pub use conditionals::{calibrate_lambda, draw_leaf_value, draw_sigma2, leaf_log_marginal, leaf_posterior};
pub use posterior::{credible_interval, posterior_d_statistics, DrawMatrix};
pub use sampler::Sampler;
pub use tree::{RegressionTree, SplitRule};
pub use truncnorm::sample_truncated_normal;

use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BartHyperparams {
    pub num_trees: usize,
    /// Leaf shrinkage; larger values shrink harder.
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub q: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for BartHyperparams {
    fn default() -> Self {
        Self {
            num_trees: 200,
            k: 2.0,
            alpha: 0.95,
            beta: 2.0,
            nu: 3.0,
            q: 0.90,
            iterations: 2500,
            burn_in: 500,
            thin: 1,
        }
    }
}

impl BartHyperparams {
    /// Reduced shrinkage (`k = 1`).
    pub fn improved() -> Self {
        Self {
            k: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.num_trees == 0 {
            return bad("num_trees must be at least 1");
        }
        if !(self.k > 0.0) {
            return bad("k must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) || !(self.nu > 0.0) || !(self.q > 0.0 && self.q < 1.0) {
            return bad("beta, nu or q out of range");
        }
        if self.burn_in >= self.iterations {
            return bad("burn_in must be below iterations");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AcceptanceStats {
    pub grow_proposed: u64,
    pub grow_accepted: u64,
    pub prune_proposed: u64,
    pub prune_accepted: u64,
    pub change_proposed: u64,
    pub change_accepted: u64,
}

fn rate(acc: u64, prop: u64) -> f64 {
    if prop == 0 {
        0.0
    } else {
        acc as f64 / prop as f64
    }
}

impl AcceptanceStats {
    pub fn grow_rate(&self) -> f64 {
        rate(self.grow_accepted, self.grow_proposed)
    }

    pub fn prune_rate(&self) -> f64 {
        rate(self.prune_accepted, self.prune_proposed)
    }

    pub fn change_rate(&self) -> f64 {
        rate(self.change_accepted, self.change_proposed)
    }
}

#[derive(Debug, Clone)]
pub struct BartPosterior {
    /// Retained draws of `theta(x_i)`.
    pub theta_draws: DrawMatrix,
    pub sigma_draws: Vec<f64>,
    /// Posterior mean of `m(A_i, x_i)` on the log-time scale.
    pub fitted_mean: Vec<f64>,
    pub acceptance: AcceptanceStats,
}

impl BartPosterior {
    pub fn theta_mean(&self) -> Vec<f64> {
        self.theta_draws.row_means()
    }

    pub fn credible_interval(&self, level: f64) -> Result<Vec<(f64, f64)>> {
        credible_interval(&self.theta_draws, level)
    }

    pub fn d_statistics(&self) -> Result<Vec<f64>> {
        posterior_d_statistics(&self.theta_draws)
    }
}

/// Runs one chain and keeps the post-burn-in draws.
///
/// `x_aug` holds the covariates (including the propensity column); the
/// treatment is supplied separately and is available to the trees as an
/// extra split variable.
pub fn fit(
    x_aug: &Matrix,
    a: &[u8],
    y: &[f64],
    delta: &[u8],
    hyper: &BartHyperparams,
    seed: u64,
) -> Result<BartPosterior> {
    let mut chain = Sampler::new(x_aug, a, y, delta, hyper, seed)?;
    let n = y.len();
    let mut theta = Vec::with_capacity(hyper.retained());
    let mut sigma = Vec::with_capacity(hyper.retained());
    let mut fitted = vec![0.0; n];
    for it in 0..hyper.iterations {
        chain.step();
        if it >= hyper.burn_in && (it - hyper.burn_in).is_multiple_of(hyper.thin) {
            theta.push(chain.theta());
            sigma.push(chain.sigma());
            for (acc, f) in fitted.iter_mut().zip(chain.fitted()) {
                *acc += f;
            }
        }
    }
    let kept = theta.len() as f64;
    fitted.iter_mut().for_each(|v| *v /= kept);
    Ok(BartPosterior {
        theta_draws: DrawMatrix::from_draws(&theta, n),
        sigma_draws: sigma,
        fitted_mean: fitted,
        acceptance: chain.stats(),
    })
}

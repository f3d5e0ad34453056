//! Conjugate pieces of the Gaussian sum-of-trees model.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

/// Log marginal likelihood of a leaf holding `n` residuals summing to `sum`,
/// up to terms shared by every leaf.
#[inline]
pub fn leaf_log_marginal(n: f64, sum: f64, sigma2: f64, sigma_mu2: f64) -> f64 {
    let denom = sigma2 + n * sigma_mu2;
    -0.5 * (denom / sigma2).ln() + sigma_mu2 * sum * sum / (2.0 * sigma2 * denom)
}

/// Mean and variance of the leaf value given its residuals.
#[inline]
pub fn leaf_posterior(n: f64, sum: f64, sigma2: f64, sigma_mu2: f64) -> (f64, f64) {
    let denom = sigma2 + n * sigma_mu2;
    (sigma_mu2 * sum / denom, sigma2 * sigma_mu2 / denom)
}

pub fn draw_leaf_value<R: Rng + ?Sized>(n: f64, sum: f64, sigma2: f64, sigma_mu2: f64, rng: &mut R) -> f64 {
    let (m, v) = leaf_posterior(n, sum, sigma2, sigma_mu2);
    let z: f64 = rng.sample(StandardNormal);
    m + v.sqrt() * z
}

/// Draw from the scaled-inverse-chi-square full conditional
/// `sigma^2 ~ (nu * lambda + ssr) / chi2(nu + n)`.
pub fn draw_sigma2<R: Rng + ?Sized>(ssr: f64, n: usize, nu: f64, lambda: f64, rng: &mut R) -> f64 {
    let chi = ChiSquared::new(nu + n as f64).expect("positive degrees of freedom");
    (nu * lambda + ssr) / chi.sample(rng)
}

/// `lambda` such that `P(sigma < sigma_hat) = q` under the prior
/// `sigma^2 ~ nu * lambda / chi2(nu)`.
pub fn calibrate_lambda(sigma_hat: f64, nu: f64, q: f64) -> f64 {
    let chi = ChiSquaredDist::new(nu).expect("positive degrees of freedom");
    sigma_hat * sigma_hat * chi.inverse_cdf(1.0 - q) / nu
}

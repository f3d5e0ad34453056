//! Normal draws conditioned to lie above a bound.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::stats::{normal_quantile, normal_sf};

/// Standardized bound above which the exponential proposal is used.
const TAIL_SWITCH: f64 = 4.0;

/// Draws from Normal(mu, sigma^2) conditioned on the value exceeding `lower`.
/// `lower = -inf` gives an untruncated draw.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mu: f64, sigma: f64, lower: f64, rng: &mut R) -> f64 {
    debug_assert!(sigma > 0.0);
    if lower == f64::NEG_INFINITY {
        let z: f64 = rng.sample(StandardNormal);
        return mu + sigma * z;
    }
    let a = (lower - mu) / sigma;
    let z = if a > TAIL_SWITCH {
        exponential_tail(a, rng)
    } else {
        // Inverse CDF on the upper tail: P(Z > z) = u * P(Z > a).
        let tail = normal_sf(a);
        loop {
            let u: f64 = rng.random();
            let z = -normal_quantile(u * tail);
            if z > a && z.is_finite() {
                break z;
            }
        }
    };
    let x = mu + sigma * z;
    if x > lower {
        x
    } else {
        // rounding at the bound
        lower + f64::EPSILON * lower.abs().max(1.0)
    }
}

/// Robert (1995) translated-exponential rejection sampler for `Z > a`, a > 0.
fn exponential_tail<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = a + e / alpha;
        let rho = (-0.5 * (z - alpha) * (z - alpha)).exp();
        if rng.random::<f64>() <= rho {
            return z;
        }
    }
}

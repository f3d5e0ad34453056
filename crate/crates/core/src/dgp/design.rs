//! Per-design formulas: assignment probabilities, counterfactual event-time
//! samplers, censoring samplers and the exact log-time effect.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::{DgpSpec, Family};
use crate::stats::logistic;

/// Intercept of the Henderson control regression function, calibrated so
/// Gaussian residuals with Uniform(6.5, 10) censoring censor about 15%.
pub const HENDERSON_INTERCEPT: f64 = 0.82;

const HU_SHAPE: f64 = 2.0;
const HU_SCALE: [f64; 2] = [1200.0, 2000.0];
const HU_CENSOR_RATE: f64 = 0.007;

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Beta(2, 4) density, `20 x (1 - x)^3` on [0, 1] and zero elsewhere.
pub fn beta24_pdf(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        20.0 * x * (1.0 - x).powi(3)
    } else {
        0.0
    }
}

pub(super) fn propensity(spec: &DgpSpec, x: &[f64]) -> f64 {
    match spec.family {
        Family::Henderson => logistic(0.2 + 0.5 * x[0] - 0.4 * x[5]),
        Family::Cui => match spec.dgp_index {
            2 => (1.0 + beta24_pdf(x[1])) / 4.0,
            4 => 1.0 / ((1.0 + (-x[0]).exp()) * (1.0 + (-x[1]).exp())),
            _ => (1.0 + beta24_pdf(x[0])) / 4.0,
        },
        Family::Hu => logistic(
            0.3 - 0.25 * x[0] - 2.25 * x[1] - 0.75 * x[2] - 0.25 * x[4] - 0.25 * x[5]
                - 0.50 * x[6]
                - 1.0 * x[8]
                + 1.25 * x[9],
        ),
    }
}

fn henderson_control(x: &[f64]) -> f64 {
    HENDERSON_INTERCEPT + 0.3 * x[0] - 0.2 * x[1] + 0.3 * x[0] * x[5]
}

fn henderson_effect(x: &[f64]) -> f64 {
    0.25 - 0.2 * x[0] + 0.3 * x[6]
}

fn cui1_effect(x: &[f64]) -> f64 {
    0.7 - 0.4 * ind(x[0] < 0.5) - 0.4 * x[1].sqrt()
}

fn cui_poisson_mean(index: u8, x: &[f64], a: f64) -> f64 {
    if index == 3 {
        x[1] * x[1] + x[2] + 6.0 + 2.0 * (x[0].sqrt() - 0.3) * a
    } else {
        x[1] + x[2] + (x[0] - 0.3).max(0.0) * a
    }
}

fn sig(v: f64) -> f64 {
    logistic(v)
}

/// Hu log-hazard shifts `(f_0(x), f_1(x))`.
pub fn hu_f(index: u8, x: &[f64]) -> (f64, f64) {
    let x1 = x[0];
    let x2 = x[1];
    let x3 = x[2];
    let x4 = x[3];
    let x5 = x[4];
    let x6 = x[5];
    let x7 = x[6];
    let f1_a = -0.2 + 0.1 * sig(x1) - 0.8 * x3.sin() - 0.1 * x5 * x5 - 0.3 * x6 - 0.2 * x7;
    let f0_b = -0.1 + 0.1 * x1 * x1 - 0.2 * x3.sin() + 0.2 * sig(x5) + 0.2 * x6 - 0.3 * x7;
    match index {
        1 => (
            0.2 - 0.5 * x1 - 0.8 * x3 - 1.8 * x5 - 0.9 * x6 - 0.1 * x7,
            f1_a,
        ),
        2 => (f0_b, f1_a),
        3 => (
            f0_b,
            0.5 - 0.1 * sig(x2) + 0.1 * x3.sin() - 0.1 * x4 * x4 + 0.2 * x4 - 0.1 * x5 * x5
                + 0.2 * sig(x5)
                + 0.2 * x6
                - 0.3 * x7,
        ),
        _ => (
            -0.2 + 0.5 * (std::f64::consts::PI * x1 * x3).sin() + 0.2 * sig(x5) + 0.2 * x6
                - 0.3 * x7,
            0.5 - 0.1 * sig(x2) + 0.1 * x3.sin() - 0.1 * x4 * x4 + 0.2 * x4
                - 0.1 * x5 * x5
                - 0.3 * x6,
        ),
    }
}

/// `E[log T | T >= 1]` for `T ~ Poisson(mu)`, by direct summation.
pub fn zero_truncated_poisson_mean_log(mu: f64) -> f64 {
    let kmax = (mu + 40.0 * mu.sqrt() + 40.0).ceil() as u64;
    let ln_mu = mu.ln();
    let mut acc = 0.0;
    for k in 2..=kmax {
        let kf = k as f64;
        let log_pk = -mu + kf * ln_mu - ln_gamma(kf + 1.0);
        acc += kf.ln() * log_pk.exp();
    }
    acc / -(-mu).exp_m1()
}

/// Poisson(mu) conditioned on `>= 1`. Sampled by inversion of the truncated
/// CDF, which is the same law as redrawing until the value is positive.
pub fn sample_zero_truncated_poisson<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> f64 {
    let p0 = (-mu).exp();
    let mass = -(-mu).exp_m1();
    let target = rng.random::<f64>() * mass;
    let kmax = (mu + 50.0 * mu.sqrt() + 100.0).ceil() as u64;
    let mut pk = p0;
    let mut cum = 0.0;
    for k in 1..=kmax {
        pk *= mu / k as f64;
        cum += pk;
        if cum >= target {
            return k as f64;
        }
    }
    kmax as f64
}

/// Exact `theta(x)` for the heterogeneous (non-null) design.
pub(super) fn effect(spec: &DgpSpec, x: &[f64]) -> f64 {
    match spec.family {
        Family::Henderson => henderson_effect(x),
        Family::Cui => match spec.dgp_index {
            1 => cui1_effect(x),
            2 => 1.0 - 2.0 * x[1],
            i => {
                zero_truncated_poisson_mean_log(cui_poisson_mean(i, x, 1.0))
                    - zero_truncated_poisson_mean_log(cui_poisson_mean(i, x, 0.0))
            }
        },
        Family::Hu => {
            let (f0, f1) = hu_f(spec.dgp_index, x);
            ((HU_SCALE[1] / HU_SCALE[0]).ln() + f0 - f1) / HU_SHAPE
        }
    }
}

/// Counterfactual event time `T(a)` under the heterogeneous design.
pub(super) fn sample_time<R: Rng + ?Sized>(spec: &DgpSpec, x: &[f64], a: bool, rng: &mut R) -> f64 {
    let af = ind(a);
    match spec.family {
        Family::Henderson => {
            let law = spec.residual_law.expect("validated henderson spec");
            (henderson_control(x) + af * henderson_effect(x) + law.sample(rng)).exp()
        }
        Family::Cui => match spec.dgp_index {
            1 => {
                let eps: f64 = rng.sample(StandardNormal);
                let lin = -1.85 - 0.8 * ind(x[0] < 0.5) + 0.7 * x[1].sqrt() + 0.2 * x[2];
                (lin + af * cui1_effect(x) + eps).exp()
            }
            2 => {
                // Lambda_0(t) = t^{1/2}
                let e: f64 = rng.sample(Exp1);
                let f = x[0] + (-0.5 + x[1]) * af;
                (e * (-f).exp()).powi(2)
            }
            i => sample_zero_truncated_poisson(cui_poisson_mean(i, x, af), rng),
        },
        Family::Hu => {
            let (f0, f1) = hu_f(spec.dgp_index, x);
            let (scale, f) = if a { (HU_SCALE[1], f1) } else { (HU_SCALE[0], f0) };
            let e: f64 = rng.sample(Exp1);
            (e * scale / f.exp()).powf(1.0 / HU_SHAPE)
        }
    }
}

pub(super) fn sample_censor<R: Rng + ?Sized>(spec: &DgpSpec, x: &[f64], a: bool, rng: &mut R) -> f64 {
    let af = ind(a);
    match spec.family {
        Family::Henderson => rng.random_range(6.5..10.0),
        Family::Cui => match spec.dgp_index {
            1 => {
                // Lambda_0(t) = t^2
                let f = -1.75 - 0.5 * x[1].sqrt()
                    + 0.2 * x[2]
                    + (1.15 + 0.5 * ind(x[0] < 0.5) - 0.3 * x[1].sqrt()) * af;
                let e: f64 = rng.sample(Exp1);
                (e * (-f).exp()).sqrt()
            }
            2 => rng.random_range(0.0..3.0),
            3 => sample_zero_truncated_poisson(12.0 + x[2].exp().ln_1p(), rng),
            _ => sample_zero_truncated_poisson(1.0 + x[2].exp().ln_1p(), rng),
        },
        Family::Hu => {
            let e: f64 = rng.sample(Exp1);
            e / HU_CENSOR_RATE
        }
    }
}

/// Administrative end of follow-up.
pub fn follow_up_cap(spec: &DgpSpec) -> f64 {
    match (spec.family, spec.dgp_index) {
        (Family::Cui, 1) => 1.5,
        (Family::Cui, 2) => 2.0,
        (Family::Cui, 3) => 15.0,
        (Family::Cui, _) => 3.0,
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::DgpSpec;

    #[test]
    fn beta_density_values() {
        assert_eq!(beta24_pdf(0.0), 0.0);
        assert!((beta24_pdf(0.2) - 2.048).abs() < 1e-12);
        assert_eq!(beta24_pdf(1.2), 0.0);
        // integrates to one
        let m = 100_000;
        let s: f64 = (0..m).map(|i| beta24_pdf((i as f64 + 0.5) / m as f64)).sum::<f64>() / m as f64;
        assert!((s - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truncated_poisson_log_mean_matches_simulation() {
        let mut rng = crate::rng::stream_rng(3, 0);
        for mu in [0.3, 1.7, 7.5] {
            let n = 400_000;
            let mc: f64 = (0..n)
                .map(|_| sample_zero_truncated_poisson(mu, &mut rng).ln())
                .sum::<f64>()
                / n as f64;
            let exact = zero_truncated_poisson_mean_log(mu);
            assert!((mc - exact).abs() < 0.005, "mu {mu}: {mc} vs {exact}");
        }
    }

    #[test]
    fn truncated_poisson_is_positive() {
        let mut rng = crate::rng::stream_rng(4, 0);
        assert!((0..10_000).all(|_| sample_zero_truncated_poisson(0.05, &mut rng) >= 1.0));
    }

    #[test]
    fn cui1_effect_example() {
        let spec = DgpSpec::cui(1, 10, 0).unwrap();
        let mut x = vec![0.0; 15];
        x[0] = 0.6;
        x[1] = 0.25;
        assert!((effect(&spec, &x) - 0.5).abs() < 1e-12);
    }
}

//! Ground-truth treatment effects.

use super::{design, gen_cui_covariates, gen_hu_covariates, sample_counterfactual, DgpSpec, Family};
use crate::rng::{child_seed, stream_rng};
use crate::{Error, Result};

/// Bumped whenever [`NULL_EFFECTS`] is regenerated.
pub const NULL_TABLE_VERSION: u32 = 1;

/// Population mean of `theta(x)` per `(family, dgp)`, rows Henderson, Cui,
/// Hu and columns DGP1..DGP4. Produced by [`population_mean_effect`] with
/// 100 000 covariate draws and seed [`NULL_TABLE_SEED`].
pub const NULL_EFFECTS: [[f64; 4]; 3] = [
    [0.400162, 0.400162, 0.400162, 0.400162],
    [0.178428, -0.367559, 0.099537, 0.081186],
    [0.312383, 0.442560, -0.001337, 0.042104],
];

pub const NULL_TABLE_SEED: u64 = 20_250_101;
pub const NULL_TABLE_DRAWS: usize = 100_000;

fn family_row(family: Family) -> usize {
    match family {
        Family::Henderson => 0,
        Family::Cui => 1,
        Family::Hu => 2,
    }
}

/// Frozen constant effect of the null variant.
pub fn null_effect(family: Family, dgp_index: u8) -> f64 {
    NULL_EFFECTS[family_row(family)][usize::from(dgp_index) - 1]
}

/// Exact `theta(x) = E[log T(1) | x] - E[log T(0) | x]`.
///
/// Closed forms exist for Henderson, Cui DGP1/DGP2 and Hu; Cui DGP3/DGP4
/// sum the zero-truncated Poisson series.
pub fn true_theta(spec: &DgpSpec, x: &[f64]) -> f64 {
    if spec.null_hte {
        null_effect(spec.family, spec.dgp_index)
    } else {
        design::effect(spec, x)
    }
}

/// Average of the heterogeneous `theta(x)` over fresh covariate draws.
pub fn population_mean_effect(family: Family, dgp_index: u8, draws: usize, seed: u64) -> Result<f64> {
    let spec = DgpSpec::new(family, dgp_index, draws, seed)?;
    let x = match family {
        Family::Cui => gen_cui_covariates(draws, seed),
        Family::Henderson | Family::Hu => gen_hu_covariates(draws, seed),
    };
    let vals: Vec<f64> = x.rows().map(|r| design::effect(&spec, r)).collect();
    Ok(crate::stats::mean(&vals))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub se: f64,
}

/// Monte-Carlo `theta(x)` from independent draws of both counterfactuals.
pub fn true_theta_oracle(spec: &DgpSpec, x: &[f64], n_mc: usize, seed: u64) -> Result<OracleEstimate> {
    if n_mc < 100_000 {
        return Err(Error::InvalidInput(format!(
            "oracle needs at least 100000 draws, got {n_mc}"
        )));
    }
    if x.len() != spec.family.covariate_dim() {
        return Err(Error::Dimension(format!(
            "{} covariates for the {} family",
            x.len(),
            spec.family
        )));
    }
    let arm = |a: bool, stream: u64| {
        let mut rng = stream_rng(child_seed(seed, stream), 0);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n_mc {
            let l = sample_counterfactual(spec, x, a, &mut rng).ln();
            sum += l;
            sumsq += l * l;
        }
        let m = sum / n_mc as f64;
        let var = (sumsq / n_mc as f64 - m * m) * n_mc as f64 / (n_mc - 1) as f64;
        (m, var.max(0.0))
    };
    let (m1, v1) = arm(true, 1);
    let (m0, v0) = arm(false, 0);
    Ok(OracleEstimate {
        estimate: m1 - m0,
        se: ((v1 + v0) / n_mc as f64).sqrt(),
    })
}

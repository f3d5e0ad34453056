//! Analytic versus Monte-Carlo `theta(x)` at frozen probe rows.

use std::fmt::Write as _;

use itelab_core::dgp::{generate, true_theta, true_theta_oracle, DgpSpec};
use itelab_core::rng::child_seed;
use itelab_core::{Matrix, Result};
use rayon::prelude::*;

pub const PROBE_SEED: u64 = 0x9E0B_E5EE_D000_0007;
pub const CLI_PROBES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub x: Vec<f64>,
    pub analytic: f64,
    pub mc: f64,
    pub se: f64,
}

impl ProbeRow {
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            (self.mc - self.analytic) / self.se
        } else if self.mc == self.analytic {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// The first `count` covariate rows the family's design produces under a
/// fixed seed.
pub fn probe_points(spec: &DgpSpec, count: usize) -> Result<Matrix> {
    Ok(generate(&spec.with_n(count).with_seed(PROBE_SEED))?.x)
}

pub fn oracle_table(spec: &DgpSpec, count: usize, n_mc: usize, seed: u64) -> Result<Vec<ProbeRow>> {
    let probes = probe_points(spec, count)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let x = probes.row(i).to_vec();
            let mc = true_theta_oracle(spec, &x, n_mc, child_seed(seed, i as u64))?;
            Ok(ProbeRow {
                analytic: true_theta(spec, &x),
                mc: mc.estimate,
                se: mc.se,
                x,
            })
        })
        .collect()
}

pub fn format_table(spec: &DgpSpec, rows: &[ProbeRow]) -> String {
    let mut s = format!("{} truth oracle\n", spec.label());
    let _ = writeln!(s, "{:>5} {:>12} {:>12} {:>10} {:>7}", "probe", "analytic", "monte_carlo", "se", "z");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:>5} {:>12.6} {:>12.6} {:>10.6} {:>7.2}",
            i + 1,
            r.analytic,
            r.mc,
            r.se,
            r.z()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use itelab_core::dgp::{make_null_variant, Family};

    #[test]
    fn probes_are_frozen_and_sized() {
        for family in Family::ALL {
            let spec = DgpSpec::new(family, 1, 50, 3).unwrap();
            let a = probe_points(&spec, CLI_PROBES).unwrap();
            let b = probe_points(&spec.with_seed(99), CLI_PROBES).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.nrows(), CLI_PROBES);
            assert_eq!(a.ncols(), family.covariate_dim());
        }
    }

    #[test]
    fn cui_dgp1_analytic_column_is_the_coefficient_formula() {
        let spec = DgpSpec::cui(1, 10, 0).unwrap();
        let rows = oracle_table(&spec, 4, 100_000, 1).unwrap();
        for r in &rows {
            let expect = 0.7 - 0.4 * f64::from(u8::from(r.x[0] < 0.5)) - 0.4 * r.x[1].sqrt();
            assert!((r.analytic - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn null_variant_column_is_constant() {
        let spec = make_null_variant(&DgpSpec::hu(2, 10, 0).unwrap());
        let rows = oracle_table(&spec, CLI_PROBES, 100_000, 1).unwrap();
        assert!(rows.iter().all(|r| r.analytic == rows[0].analytic));
        assert!(format_table(&spec, &rows).contains("hu-dgp2-null"));
    }

    #[test]
    fn too_few_draws_is_an_error() {
        let spec = DgpSpec::hu(1, 10, 0).unwrap();
        assert!(oracle_table(&spec, 2, 1000, 1).is_err());
    }
}

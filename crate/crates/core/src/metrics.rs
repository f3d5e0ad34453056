//! Scoring of estimated effects against the truth.

use crate::bart::DrawMatrix;
use crate::csf::CsfEstimate;
use crate::stats::{mean, pairwise_sum, quantile_sorted, variance};
use crate::{Error, Result};

/// Lower and upper flag thresholds for the posterior heterogeneity statistic.
pub const D_LOWER: f64 = 0.025;
pub const D_UPPER: f64 = 0.975;

const HL_GROUPS: usize = 10;
const HL_VAR_FLOOR: f64 = 1e-6;

/// Metric bundle for one (replication, estimator, variant).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub family: String,
    pub dgp_index: u8,
    pub null_hte: bool,
    pub estimator: String,
    pub variant: String,
    pub rep_index: usize,
    pub seed: u64,
    pub n: usize,
    pub bias: f64,
    pub rmse: f64,
    pub misclass: f64,
    pub hl: f64,
    pub coverage: f64,
    pub null_flag_prop: f64,
    pub censor_rate: f64,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::InvalidInput("empty input".into()));
    }
    if a != b {
        return Err(Error::Dimension(format!("{a} estimates for {b} true values")));
    }
    Ok(())
}

/// `(mean(theta_hat - theta), sqrt(mean((theta_hat - theta)^2)))`.
pub fn bias_rmse(theta_hat: &[f64], theta_true: &[f64]) -> Result<(f64, f64)> {
    check_lengths(theta_hat.len(), theta_true.len())?;
    let diff: Vec<f64> = theta_hat.iter().zip(theta_true).map(|(h, t)| h - t).collect();
    if diff.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("non-finite effect".into()));
    }
    let sq: Vec<f64> = diff.iter().map(|d| d * d).collect();
    Ok((mean(&diff), mean(&sq).sqrt()))
}

/// Posterior sign misclassification. Individuals with a zero true effect are
/// left out of the denominator.
pub fn misclass_bart(draws: &DrawMatrix, theta_true: &[f64]) -> Result<f64> {
    check_lengths(draws.n(), theta_true.len())?;
    let s = draws.s() as f64;
    let mut counted = 0usize;
    let mut wrong = 0usize;
    for (i, &t) in theta_true.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        counted += 1;
        let row = draws.row(i);
        let neg = row.iter().filter(|&&v| v < 0.0).count() as f64 / s;
        let pos = row.iter().filter(|&&v| v > 0.0).count() as f64 / s;
        if (t > 0.0 && neg > 0.5) || (t < 0.0 && pos > 0.5) {
            wrong += 1;
        }
    }
    if counted == 0 {
        return Err(Error::SignUndefined);
    }
    Ok(wrong as f64 / counted as f64)
}

/// Point-estimate sign misclassification, zeros excluded as in
/// [`misclass_bart`].
pub fn misclass_csf(theta_hat: &[f64], theta_true: &[f64]) -> Result<f64> {
    check_lengths(theta_hat.len(), theta_true.len())?;
    let mut counted = 0usize;
    let mut wrong = 0usize;
    for (&h, &t) in theta_hat.iter().zip(theta_true) {
        if t == 0.0 {
            continue;
        }
        counted += 1;
        if (t > 0.0 && h < 0.0) || (t < 0.0 && h > 0.0) {
            wrong += 1;
        }
    }
    if counted == 0 {
        return Err(Error::SignUndefined);
    }
    Ok(wrong as f64 / counted as f64)
}

/// Group index per individual: deciles of `theta_hat` (ties go to the lower
/// group), or one group per distinct value when there are fewer than ten.
fn hl_groups(theta_hat: &[f64]) -> Result<Vec<usize>> {
    let mut sorted = theta_hat.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::TooSmall("fewer than two distinct estimates".into()));
    }
    if distinct.len() < HL_GROUPS {
        return Ok(theta_hat
            .iter()
            .map(|v| distinct.partition_point(|d| d < v))
            .collect());
    }
    let cuts: Vec<f64> = (1..HL_GROUPS)
        .map(|g| quantile_sorted(&sorted, g as f64 / HL_GROUPS as f64))
        .collect();
    Ok(theta_hat.iter().map(|v| cuts.partition_point(|c| c < v)).collect())
}

/// Grouped calibration statistic
/// `sum_g n_g (mean(theta_hat)_g - mean(theta)_g)^2 / v_g`, where `v_g` is
/// the within-group variance of `theta_hat - theta` (floored at 1e-6).
pub fn hosmer_lemeshow(theta_hat: &[f64], theta_true: &[f64]) -> Result<f64> {
    check_lengths(theta_hat.len(), theta_true.len())?;
    if theta_hat.len() < 50 {
        return Err(Error::TooSmall(format!(
            "{} individuals, need at least 50",
            theta_hat.len()
        )));
    }
    let groups = hl_groups(theta_hat)?;
    let ngroups = groups.iter().max().map_or(0, |g| g + 1);
    let mut gaps: Vec<Vec<f64>> = vec![Vec::new(); ngroups];
    for (i, &g) in groups.iter().enumerate() {
        gaps[g].push(theta_hat[i] - theta_true[i]);
    }
    let terms: Vec<f64> = gaps
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let gap = mean(g);
            let v = variance(g).max(HL_VAR_FLOOR);
            g.len() as f64 * gap * gap / v
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Fraction of closed intervals `[lo, hi]` containing the true value.
pub fn coverage(intervals: &[(f64, f64)], theta_true: &[f64]) -> Result<f64> {
    check_lengths(intervals.len(), theta_true.len())?;
    if let Some(i) = intervals.iter().position(|(lo, hi)| lo > hi) {
        return Err(Error::InvalidInput(format!("interval {i} has lo > hi")));
    }
    let hits = intervals
        .iter()
        .zip(theta_true)
        .filter(|&(&(lo, hi), &t)| lo <= t && t <= hi)
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

/// Share of individuals whose interval excludes the mean estimated effect.
pub fn null_flags_csf(estimate: &CsfEstimate) -> f64 {
    let n = estimate.theta_hat.len();
    if n == 0 {
        return 0.0;
    }
    let avg = mean(&estimate.theta_hat);
    let flagged = estimate
        .ci
        .iter()
        .filter(|(lo, hi)| avg < *lo || avg > *hi)
        .count();
    flagged as f64 / n as f64
}

/// Share of posterior heterogeneity statistics outside `[0.025, 0.975]`
/// (flagged when `D <= 0.025` or `D >= 0.975`).
pub fn null_flags_bart(d: &[f64]) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let flagged = d.iter().filter(|&&v| v <= D_LOWER || v >= D_UPPER).count();
    flagged as f64 / d.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn bias_rmse_fixtures() {
        let t = [0.1, -0.4, 2.0];
        assert_eq!(bias_rmse(&t, &t).unwrap(), (0.0, 0.0));
        let shifted: Vec<f64> = t.iter().map(|v| v + 0.3).collect();
        let (b, r) = bias_rmse(&shifted, &t).unwrap();
        assert!(approx(b, 0.3) && approx(r, 0.3));
        let (b, r) = bias_rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert!(approx(b, 0.0) && approx(r, 1.0));
        assert!(bias_rmse(&[], &[]).is_err());
        assert!(bias_rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn draws_with_negative_share(neg: usize, total: usize) -> Vec<f64> {
        (0..total).map(|k| if k < neg { -1.0 } else { 1.0 }).collect()
    }

    #[test]
    fn misclass_bart_fixtures() {
        let rows = vec![
            draws_with_negative_share(60, 100),
            draws_with_negative_share(90, 100),
            draws_with_negative_share(100, 100),
        ];
        let d = DrawMatrix::from_rows(&rows);
        // +0.5 with 60% negative: wrong. -0.2 with 90% negative: right.
        // theta = 0 is dropped from the denominator.
        assert!(approx(misclass_bart(&d, &[0.5, -0.2, 0.0]).unwrap(), 0.5));
        assert!(matches!(
            misclass_bart(&d, &[0.0, 0.0, 0.0]),
            Err(Error::SignUndefined)
        ));
    }

    #[test]
    fn misclass_csf_fixtures() {
        assert_eq!(misclass_csf(&[-0.1], &[0.2]).unwrap(), 1.0);
        let t = [0.3, -0.2, 1.5, -4.0];
        assert_eq!(misclass_csf(&t, &t).unwrap(), 0.0);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert_eq!(misclass_csf(&neg, &t).unwrap(), 1.0);
        assert!(misclass_csf(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn hl_is_zero_under_perfect_calibration() {
        let t: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(hosmer_lemeshow(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn hl_hand_computed_fixture() {
        // theta = 0..99; decile g holds ranks 10g..10g+9. Gap within decile
        // g is c_g +/- 0.1 alternating, so the group mean gap is c_g and the
        // sample variance is 10 * 0.01 / 9.
        let c = [0.0, 0.1, -0.2, 0.3, 0.0, 0.05, -0.05, 0.2, 0.0, -0.3];
        let theta: Vec<f64> = (0..100).map(f64::from).collect();
        let hat: Vec<f64> = (0..100)
            .map(|i| {
                let wiggle = if i % 2 == 0 { 0.1 } else { -0.1 };
                theta[i] + c[i / 10] + wiggle
            })
            .collect();
        let v = 10.0 * 0.01 / 9.0;
        let expected: f64 = c.iter().map(|cg| 10.0 * cg * cg / v).sum();
        let hl = hosmer_lemeshow(&hat, &theta).unwrap();
        assert!((hl - expected).abs() < 1e-9, "{hl} vs {expected}");
    }

    #[test]
    fn hl_collapses_groups_for_few_distinct_values() {
        let hat: Vec<f64> = (0..60).map(|i| f64::from(i % 3)).collect();
        let truth: Vec<f64> = hat.iter().map(|v| v + 0.1).collect();
        let hl = hosmer_lemeshow(&hat, &truth).unwrap();
        // three groups of 20, each with a constant gap of -0.1 and floored variance
        assert!((hl - 3.0 * 20.0 * 0.01 / 1e-6).abs() < 1e-3);
        let constant = vec![1.0; 60];
        assert!(hosmer_lemeshow(&constant, &truth).is_err());
        assert!(hosmer_lemeshow(&hat[..40], &truth[..40]).is_err());
    }

    #[test]
    fn hl_ignores_order_within_deciles() {
        let theta: Vec<f64> = (0..100).map(|i| f64::from(i) * 0.01).collect();
        let hat: Vec<f64> = theta.iter().enumerate().map(|(i, t)| t + 0.02 * ((i * 7 % 5) as f64)).collect();
        let base = hosmer_lemeshow(&hat, &theta).unwrap();
        let mut idx: Vec<usize> = (0..100).collect();
        idx.reverse();
        let hat2: Vec<f64> = idx.iter().map(|&i| hat[i]).collect();
        let theta2: Vec<f64> = idx.iter().map(|&i| theta[i]).collect();
        assert!((hosmer_lemeshow(&hat2, &theta2).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn coverage_fixtures() {
        let wide = vec![(-1e300, 1e300); 3];
        assert_eq!(coverage(&wide, &[0.0, 5.0, -2.0]).unwrap(), 1.0);
        assert_eq!(coverage(&[(0.0, 1.0)], &[0.5]).unwrap(), 1.0);
        assert_eq!(coverage(&[(0.0, 1.0)], &[1.0]).unwrap(), 1.0);
        assert_eq!(coverage(&[(0.3, 0.3)], &[0.3]).unwrap(), 1.0);
        assert_eq!(coverage(&[(0.0, 1.0)], &[1.5]).unwrap(), 0.0);
        assert!(coverage(&[(1.0, 0.0)], &[0.5]).is_err());
    }

    #[test]
    fn csf_null_flags() {
        let flat = CsfEstimate::from_se(vec![0.2; 4], vec![0.1; 4]);
        assert_eq!(null_flags_csf(&flat), 0.0);
        let mut est = CsfEstimate::from_se(vec![0.0; 10], vec![0.06; 10]);
        est.theta_hat[9] = 1.0;
        est.ci[9] = (0.9, 1.1);
        // mean is 0.1, so only the last interval excludes it
        assert_eq!(null_flags_csf(&est), 0.1);
    }

    #[test]
    fn bart_null_flags_use_closed_thresholds() {
        assert_eq!(null_flags_bart(&[0.025, 0.5, 0.975, 0.03]), 0.5);
    }

    #[test]
    fn point_mass_draws_agree_with_point_estimates() {
        let hat = [0.4, -0.3, 0.2, -0.1, 0.7];
        let truth = [0.1, 0.2, -0.3, -0.5, 0.9];
        let rows: Vec<Vec<f64>> = hat.iter().map(|&h| vec![h; 100]).collect();
        let d = DrawMatrix::from_rows(&rows);
        assert_eq!(
            misclass_bart(&d, &truth).unwrap(),
            misclass_csf(&hat, &truth).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rmse_dominates_abs_bias(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..60)) {
            let (hat, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (b, r) = bias_rmse(&hat, &truth).unwrap();
            prop_assert!(r + 1e-9 * (1.0 + r) >= b.abs());
        }

        #[test]
        fn widening_never_lowers_coverage(
            rows in prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0, -6.0f64..6.0, 0.0f64..2.0), 1..60)
        ) {
            let narrow: Vec<(f64, f64)> = rows.iter().map(|&(c, w, _, _)| (c - w, c + w)).collect();
            let wide: Vec<(f64, f64)> = rows.iter().map(|&(c, w, _, e)| (c - w - e, c + w + e)).collect();
            let truth: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let a = coverage(&narrow, &truth).unwrap();
            let b = coverage(&wide, &truth).unwrap();
            prop_assert!(b >= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn hl_is_nonnegative(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 50..120)) {
            let (hat, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(hl) = hosmer_lemeshow(&hat, &truth) {
                prop_assert!(hl >= 0.0);
            }
        }
    }
}

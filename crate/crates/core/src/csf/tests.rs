use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::dgp::{generate, DgpSpec};
use crate::propensity::{augment, fit_propensity};
use crate::rng::stream_rng;
use crate::stats::quantile;

fn homoscedastic(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = stream_rng(seed, 0);
    let mut x = Matrix::zeros(n, 3);
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..3 {
            x.set(i, j, rng.random::<f64>());
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        g.push(x.get(i, 0) + z);
    }
    (x, g)
}

fn hyper(num_trees: usize) -> CsfHyperparams {
    CsfHyperparams {
        num_trees,
        bag_size: 50,
        ..CsfHyperparams::default()
    }
}

#[test]
fn hyperparameter_validation() {
    assert!(CsfHyperparams::default().validate().is_ok());
    assert_eq!(CsfHyperparams::improved().min_node_size, 2);
    let bad = CsfHyperparams {
        num_trees: 1010,
        ..CsfHyperparams::default()
    };
    assert!(bad.validate().is_err());
    let bad = CsfHyperparams {
        honesty_fraction: 1.0,
        ..CsfHyperparams::default()
    };
    assert!(bad.validate().is_err());
    assert_eq!(CsfHyperparams::default().mtry_for(16), 16);
    assert_eq!(CsfHyperparams::default().mtry_for(100), 30);
}

#[test]
fn more_trees_do_not_inflate_se() {
    let (x, g) = homoscedastic(1000, 1);
    let probes = Matrix::from_rows(&[vec![0.2, 0.5, 0.5], vec![0.8, 0.5, 0.5], vec![0.5, 0.1, 0.9]]).unwrap();
    let small = grow_forest(&x, &g, &hyper(500), 2).unwrap().predict(&probes);
    let large = grow_forest(&x, &g, &hyper(1000), 2).unwrap().predict(&probes);
    for i in 0..3 {
        let noise = 3.0 * small.se[i].max(large.se[i]);
        assert!((small.theta_hat[i] - large.theta_hat[i]).abs() < noise);
        assert!(large.se[i] <= 1.25 * small.se[i], "{} vs {}", large.se[i], small.se[i]);
    }
}

#[test]
fn interval_width_shrinks_with_n() {
    let width = |n: usize| {
        let (x, g) = homoscedastic(n, 3);
        let est = grow_forest(&x, &g, &hyper(500), 4).unwrap().predict_oob(&x);
        let w: Vec<f64> = est.ci.iter().map(|(lo, hi)| hi - lo).collect();
        assert!(est.se.iter().all(|&s| s > 0.0));
        quantile(&w, 0.5)
    };
    assert!(width(4000) < width(1000));
}

fn pipeline(spec: &DgpSpec, hyper: &CsfHyperparams, seed: u64) -> (CsfFit, Vec<f64>) {
    let d = generate(spec).unwrap();
    let prop = fit_propensity(&d.x, &d.a, seed).unwrap();
    let x_aug = augment(&d.x, &prop.ehat).unwrap();
    let fit = fit_csf(&x_aug, &d.a, &d.y, &d.delta, &prop.ehat, hyper, seed).unwrap();
    (fit, d.theta_true)
}

#[test]
fn estimates_are_deterministic() {
    let spec = DgpSpec::hu(1, 300, 5).unwrap();
    let (a, _) = pipeline(&spec, &hyper(200), 9);
    let (b, _) = pipeline(&spec, &hyper(200), 9);
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.pseudo_outcomes, b.pseudo_outcomes);
}

#[test]
fn nuisance_invariants_on_generated_data() {
    let spec = DgpSpec::cui(1, 400, 3).unwrap();
    let (fit, theta) = pipeline(&spec, &hyper(200), 1);
    assert!(fit.nuisance.horizon > 0.0);
    assert!(fit.nuisance.s_c.iter().all(|&s| (SURVIVAL_FLOOR..=1.0).contains(&s)));
    assert_eq!(fit.estimate.theta_hat.len(), theta.len());
    assert!(fit.estimate.ci.iter().all(|&(lo, hi)| lo < hi));
}

#[test]
fn input_errors() {
    let x = Matrix::zeros(40, 2);
    let y = vec![1.0; 40];
    let a: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let e = vec![0.5; 40];
    let h = hyper(100);
    assert!(matches!(csf_estimate_ite(&x, &a, &y, &[0; 40], &e, &h, 1), Err(Error::NoEvents)));
    assert!(matches!(
        csf_estimate_ite(&x, &[1; 40], &y, &[1; 40], &e, &h, 1),
        Err(Error::DegenerateTreatment)
    ));
    let mut bad_e = e.clone();
    bad_e[3] = 0.999;
    assert!(matches!(
        csf_estimate_ite(&x, &a, &y, &[1; 40], &bad_e, &h, 1),
        Err(Error::Positivity { row: 3, .. })
    ));
}

#[test]
#[ignore = "diagnostic"]
fn coverage_probe() {
    for k in 1..=4 {
        let spec = DgpSpec::hu(k, 500, 11).unwrap();
        let (fit, theta) = pipeline(&spec, &hyper(1000), 2);
        let cov = crate::metrics::coverage(&fit.estimate.ci, &theta).unwrap();
        let (bias, rmse) = crate::metrics::bias_rmse(&fit.estimate.theta_hat, &theta).unwrap();
        let se_med = quantile(&fit.estimate.se, 0.5);
        eprintln!("hu{k}: coverage {cov:.3} bias {bias:.3} rmse {rmse:.3} se median {se_med:.4}");
    }
}

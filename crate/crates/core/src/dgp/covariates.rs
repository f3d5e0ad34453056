//! Covariate generators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use crate::matrix::Matrix;
use crate::rng::stream_rng;

pub const CUI_DIM: usize = 15;
pub const HU_DIM: usize = 10;
const HU_SD: f64 = 0.35;

/// `V_ij = 0.5^|i-j|`.
pub fn cui_covariance() -> DMatrix<f64> {
    DMatrix::from_fn(CUI_DIM, CUI_DIM, |i, j| 0.5f64.powi(i.abs_diff(j) as i32))
}

/// Lower Cholesky factor of [`cui_covariance`].
pub fn cui_cholesky() -> DMatrix<f64> {
    cui_covariance()
        .cholesky()
        .expect("0.5^|i-j| is positive definite")
        .l()
}

/// `X = L U` row-wise with `U` i.i.d. Uniform(0, 1).
pub fn gen_cui_covariates(n: usize, seed: u64) -> Matrix {
    let l = cui_cholesky();
    let mut rng = stream_rng(seed, 0);
    let mut x = Matrix::zeros(n, CUI_DIM);
    let mut u = [0.0; CUI_DIM];
    for i in 0..n {
        for v in u.iter_mut() {
            *v = rng.random::<f64>();
        }
        let row = x.row_mut(i);
        for (r, out) in row.iter_mut().enumerate() {
            *out = (0..=r).map(|c| l[(r, c)] * u[c]).sum();
        }
    }
    x
}

/// Five Normal(0, 0.35^2) columns followed by five Bernoulli(0.5) columns.
pub fn gen_hu_covariates(n: usize, seed: u64) -> Matrix {
    let mut rng = stream_rng(seed, 0);
    let normal = Normal::new(0.0, HU_SD).expect("valid normal");
    let coin = Bernoulli::new(0.5).expect("valid bernoulli");
    let mut x = Matrix::zeros(n, HU_DIM);
    for i in 0..n {
        let row = x.row_mut(i);
        for v in row.iter_mut().take(5) {
            *v = normal.sample(&mut rng);
        }
        for v in row.iter_mut().skip(5) {
            *v = if coin.sample(&mut rng) { 1.0 } else { 0.0 };
        }
    }
    x
}

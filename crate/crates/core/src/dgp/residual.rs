//! Mean-zero residual laws for the Henderson design.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Gumbel, StandardNormal, StudentT};

use crate::stats::EULER_GAMMA;

/// Residual distribution `W` in `log T = m(A, x) + W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResidualLaw {
    /// Normal(0, 1).
    Gaussian,
    /// Gumbel with scale 1 and location `-gamma`, so the mean is zero.
    Gumbel,
    /// Gamma(shape 2, scale 1) shifted by its mean.
    StdGamma,
    /// Equal-weight mixture of t3 at locations -2, 0, 2.
    TMixture,
}

const GAMMA_SHAPE: f64 = 2.0;
const TMIX_LOCATIONS: [f64; 3] = [-2.0, 0.0, 2.0];

impl ResidualLaw {
    pub const ALL: [ResidualLaw; 4] = [
        ResidualLaw::Gaussian,
        ResidualLaw::Gumbel,
        ResidualLaw::StdGamma,
        ResidualLaw::TMixture,
    ];

    /// Henderson DGP index (1..=4) for this law.
    pub fn dgp_index(self) -> u8 {
        match self {
            ResidualLaw::Gaussian => 1,
            ResidualLaw::Gumbel => 2,
            ResidualLaw::StdGamma => 3,
            ResidualLaw::TMixture => 4,
        }
    }

    pub fn from_dgp_index(index: u8) -> Option<Self> {
        Self::ALL.get(usize::from(index).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ResidualLaw::Gaussian => "gaussian",
            ResidualLaw::Gumbel => "gumbel",
            ResidualLaw::StdGamma => "std-gamma",
            ResidualLaw::TMixture => "t-mixture",
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ResidualLaw::Gaussian => rng.sample(StandardNormal),
            ResidualLaw::Gumbel => Gumbel::new(-EULER_GAMMA, 1.0)
                .expect("valid gumbel")
                .sample(rng),
            ResidualLaw::StdGamma => {
                Gamma::new(GAMMA_SHAPE, 1.0)
                    .expect("valid gamma")
                    .sample(rng)
                    - GAMMA_SHAPE
            }
            ResidualLaw::TMixture => {
                let loc = TMIX_LOCATIONS[rng.random_range(0..TMIX_LOCATIONS.len())];
                loc + StudentT::new(3.0).expect("valid t").sample(rng)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::stats::{mean, quantile_sorted};

    fn draws(law: ResidualLaw, n: usize) -> Vec<f64> {
        let mut rng = stream_rng(2024, law.dgp_index() as u64);
        (0..n).map(|_| law.sample(&mut rng)).collect()
    }

    #[test]
    fn every_law_has_mean_zero() {
        for law in ResidualLaw::ALL {
            let m = mean(&draws(law, 1_000_000));
            assert!(m.abs() < 0.01, "{law:?} mean {m}");
        }
    }

    #[test]
    fn gaussian_is_symmetric() {
        let x = draws(ResidualLaw::Gaussian, 1_000_000);
        let m = mean(&x);
        let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
        let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / x.len() as f64;
        let skew = m3 / m2.powf(1.5);
        assert!(skew.abs() < 0.02, "skewness {skew}");
    }

    // t3 has no finite third absolute moment, so symmetry is checked with the
    // quartile (Bowley) skewness instead of the moment ratio.
    #[test]
    fn t_mixture_is_symmetric() {
        let mut x = draws(ResidualLaw::TMixture, 1_000_000);
        x.sort_by(f64::total_cmp);
        let (q1, q2, q3) = (
            quantile_sorted(&x, 0.25),
            quantile_sorted(&x, 0.5),
            quantile_sorted(&x, 0.75),
        );
        let bowley = (q3 + q1 - 2.0 * q2) / (q3 - q1);
        assert!(bowley.abs() < 0.02, "bowley skewness {bowley}");
    }

    #[test]
    fn std_gamma_is_right_skewed() {
        let mut x = draws(ResidualLaw::StdGamma, 100_000);
        x.sort_by(f64::total_cmp);
        assert!(quantile_sorted(&x, 0.5) < 0.0);
    }

    #[test]
    fn dgp_index_round_trips() {
        for law in ResidualLaw::ALL {
            assert_eq!(ResidualLaw::from_dgp_index(law.dgp_index()), Some(law));
        }
        assert_eq!(ResidualLaw::from_dgp_index(0), None);
        assert_eq!(ResidualLaw::from_dgp_index(5), None);
    }
}

//! Data-generating processes with known individualized treatment effects.
//!
//! Three families are provided. `Henderson` uses a fixed surrogate regression
//! function on a fixed cohort and redraws only residuals and censoring per
//! replication; `Cui` and `Hu` redraw everything. Each has four DGPs and a
//! null-heterogeneity variant in which every individual has the same effect.

mod covariates;
mod design;
mod residual;
mod truth;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

pub use covariates::{cui_cholesky, cui_covariance, gen_cui_covariates, gen_hu_covariates, CUI_DIM, HU_DIM};
pub use design::{beta24_pdf, follow_up_cap, zero_truncated_poisson_mean_log, HENDERSON_INTERCEPT};
pub use residual::ResidualLaw;
pub use truth::{
    null_effect, population_mean_effect, true_theta, true_theta_oracle, OracleEstimate,
    NULL_EFFECTS, NULL_TABLE_DRAWS, NULL_TABLE_SEED, NULL_TABLE_VERSION,
};

use crate::matrix::Matrix;
use crate::rng::{child_seed, stream_rng};
use crate::{Error, Result};

/// Seed of the fixed Henderson cohort (covariates and treatment), shared by
/// every replication.
pub const HENDERSON_COHORT_SEED: u64 = 0x5EED_C0DE_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Henderson,
    Cui,
    Hu,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Henderson, Family::Cui, Family::Hu];

    pub fn name(self) -> &'static str {
        match self {
            Family::Henderson => "henderson",
            Family::Cui => "cui",
            Family::Hu => "hu",
        }
    }

    pub fn covariate_dim(self) -> usize {
        match self {
            Family::Cui => CUI_DIM,
            Family::Henderson | Family::Hu => HU_DIM,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "henderson" => Ok(Family::Henderson),
            "cui" => Ok(Family::Cui),
            "hu" => Ok(Family::Hu),
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

/// Full recipe for one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DgpSpec {
    pub family: Family,
    pub dgp_index: u8,
    pub n: usize,
    pub seed: u64,
    pub null_hte: bool,
    /// Henderson only; fixed by `dgp_index`.
    pub residual_law: Option<ResidualLaw>,
}

impl DgpSpec {
    pub fn new(family: Family, dgp_index: u8, n: usize, seed: u64) -> Result<Self> {
        let residual_law = match family {
            Family::Henderson => Some(ResidualLaw::from_dgp_index(dgp_index).ok_or_else(|| {
                Error::InvalidInput(format!("dgp index {dgp_index} outside 1..=4"))
            })?),
            _ => None,
        };
        let spec = Self {
            family,
            dgp_index,
            n,
            seed,
            null_hte: false,
            residual_law,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn henderson(dgp_index: u8, n: usize, seed: u64) -> Result<Self> {
        Self::new(Family::Henderson, dgp_index, n, seed)
    }

    pub fn cui(dgp_index: u8, n: usize, seed: u64) -> Result<Self> {
        Self::new(Family::Cui, dgp_index, n, seed)
    }

    pub fn hu(dgp_index: u8, n: usize, seed: u64) -> Result<Self> {
        Self::new(Family::Hu, dgp_index, n, seed)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.dgp_index) {
            return Err(Error::InvalidInput(format!(
                "dgp index {} outside 1..=4",
                self.dgp_index
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        match (self.family, self.residual_law) {
            (Family::Henderson, Some(law)) if law.dgp_index() == self.dgp_index => Ok(()),
            (Family::Henderson, _) => Err(Error::InvalidInput(
                "henderson specs need the residual law matching their dgp index".into(),
            )),
            (_, Some(_)) => Err(Error::InvalidInput(
                "residual law is only defined for the henderson family".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// Short label such as `cui-dgp2` or `hu-dgp4-null`.
    pub fn label(&self) -> String {
        format!(
            "{}-dgp{}{}",
            self.family,
            self.dgp_index,
            if self.null_hte { "-null" } else { "" }
        )
    }
}

/// Same design with the treatment effect replaced by its population mean.
///
/// The treated counterfactual becomes `T(1) = exp(c) * T(0)`, so
/// `theta(x) = c` for every `x` while covariates, assignment and censoring
/// are untouched. For designs whose effect enters as an additive log-time or
/// log-hazard term this is exactly the constant-coefficient replacement.
pub fn make_null_variant(spec: &DgpSpec) -> DgpSpec {
    DgpSpec {
        null_hte: true,
        ..*spec
    }
}

/// One simulated dataset with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    pub x: Matrix,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub delta: Vec<u8>,
    pub theta_true: Vec<f64>,
    pub e_true: Vec<f64>,
    pub t_latent: Vec<f64>,
}

impl SurvivalDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn censor_rate(&self) -> f64 {
        let censored = self.delta.iter().filter(|&&d| d == 0).count();
        censored as f64 / self.n() as f64
    }

    /// Writes `id,A,Y,delta,theta_true,e_true,x1..xp`. Floats use Rust's
    /// shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let p = self.x.ncols();
        let mut header = String::from("id,A,Y,delta,theta_true,e_true");
        for j in 1..=p {
            header.push_str(&format!(",x{j}"));
        }
        writeln!(out, "{header}")?;
        for i in 0..self.n() {
            write!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                self.a[i],
                self.y[i],
                self.delta[i],
                self.theta_true[i],
                self.e_true[i]
            )?;
            for v in self.x.row(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn check_row(spec: &DgpSpec, x: &[f64]) -> Result<()> {
    let p = spec.family.covariate_dim();
    if x.len() != p {
        return Err(Error::Dimension(format!(
            "{} covariates for the {} family, expected {p}",
            x.len(),
            spec.family
        )));
    }
    Ok(())
}

/// True assignment probability `e(x)`.
pub fn propensity_true(spec: &DgpSpec, x: &[f64]) -> Result<f64> {
    check_row(spec, x)?;
    let e = design::propensity(spec, x);
    Ok(if e <= 0.0 {
        0.005
    } else if e >= 1.0 {
        0.995
    } else {
        e
    })
}

/// Counterfactual event time `T(a)` at covariates `x`.
pub fn sample_counterfactual<R: Rng + ?Sized>(spec: &DgpSpec, x: &[f64], a: bool, rng: &mut R) -> f64 {
    if spec.null_hte && a {
        null_effect(spec.family, spec.dgp_index).exp() * design::sample_time(spec, x, false, rng)
    } else {
        design::sample_time(spec, x, a, rng)
    }
}

/// Latent event times for the observed arms, and the true effect per row.
pub fn sample_survival_times(
    spec: &DgpSpec,
    x: &Matrix,
    a: &[u8],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.nrows() != a.len() {
        return Err(Error::Dimension(format!(
            "{} covariate rows, {} treatments",
            x.nrows(),
            a.len()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut times = Vec::with_capacity(a.len());
    let mut theta = Vec::with_capacity(a.len());
    for (i, (row, &ai)) in x.rows().zip(a).enumerate() {
        check_row(spec, row)?;
        if ai > 1 {
            return Err(Error::InvalidInput(format!("treatment {ai} at row {i}")));
        }
        let t = sample_counterfactual(spec, row, ai == 1, &mut rng);
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::NonFinite {
                row: i,
                what: "event time",
            });
        }
        let th = true_theta(spec, row);
        if !th.is_finite() {
            return Err(Error::NonFinite {
                row: i,
                what: "treatment effect",
            });
        }
        times.push(t);
        theta.push(th);
    }
    Ok((times, theta))
}

/// Censoring times before the administrative cap.
pub fn sample_censoring(spec: &DgpSpec, x: &Matrix, a: &[u8], seed: u64) -> Result<Vec<f64>> {
    if x.nrows() != a.len() {
        return Err(Error::Dimension(format!(
            "{} covariate rows, {} treatments",
            x.nrows(),
            a.len()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    Ok(x.rows()
        .zip(a)
        .map(|(row, &ai)| design::sample_censor(spec, row, ai == 1, &mut rng))
        .collect())
}

fn covariates_and_treatment(spec: &DgpSpec) -> Result<(Matrix, Vec<f64>, Vec<u8>)> {
    let cohort_seed = match spec.family {
        Family::Henderson => HENDERSON_COHORT_SEED,
        _ => spec.seed,
    };
    let x_seed = child_seed(cohort_seed, 1);
    let x = match spec.family {
        Family::Cui => gen_cui_covariates(spec.n, x_seed),
        Family::Henderson | Family::Hu => gen_hu_covariates(spec.n, x_seed),
    };
    let mut rng = stream_rng(child_seed(cohort_seed, 2), 0);
    let mut e = Vec::with_capacity(spec.n);
    let mut a = Vec::with_capacity(spec.n);
    for row in x.rows() {
        let p = propensity_true(spec, row)?;
        e.push(p);
        a.push(u8::from(rng.random::<f64>() < p));
    }
    Ok((x, e, a))
}

/// Generates one dataset. Bit-identical for identical specs.
pub fn generate(spec: &DgpSpec) -> Result<SurvivalDataset> {
    spec.validate()?;
    let (x, e_true, a) = covariates_and_treatment(spec)?;
    let (t, theta_true) = sample_survival_times(spec, &x, &a, child_seed(spec.seed, 3))?;
    let c = sample_censoring(spec, &x, &a, child_seed(spec.seed, 4))?;
    let cap = follow_up_cap(spec);
    let mut y = Vec::with_capacity(spec.n);
    let mut delta = Vec::with_capacity(spec.n);
    for (&ti, &ci) in t.iter().zip(&c) {
        let limit = ci.min(cap);
        if ti <= limit {
            y.push(ti);
            delta.push(1);
        } else {
            y.push(limit);
            delta.push(0);
        }
    }
    Ok(SurvivalDataset {
        x,
        a,
        y,
        delta,
        theta_true,
        e_true,
        t_latent: t,
    })
}

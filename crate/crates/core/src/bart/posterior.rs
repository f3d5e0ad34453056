//! Posterior draw storage and summaries.

use std::io::{Read, Write};

use crate::stats::{pairwise_sum, quantile_sorted};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BARTPOST";
const MIN_DRAWS: usize = 100;

/// `n x S` matrix of draws, one row per individual.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    n: usize,
    s: usize,
    data: Vec<f64>,
}

impl DrawMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let s = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == s), "ragged draw rows");
        Self {
            n: rows.len(),
            s,
            data: rows.concat(),
        }
    }

    /// Builds from per-draw vectors (each of length `n`).
    pub fn from_draws(draws: &[Vec<f64>], n: usize) -> Self {
        let s = draws.len();
        let mut data = vec![0.0; n * s];
        for (k, d) in draws.iter().enumerate() {
            assert_eq!(d.len(), n, "draw {k} has the wrong length");
            for (i, &v) in d.iter().enumerate() {
                data[i * s + k] = v;
            }
        }
        Self { n, s, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.s..(i + 1) * self.s]
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| pairwise_sum(self.row(i)) / self.s as f64)
            .collect()
    }

    /// Row-major little-endian dump: `BARTPOST`, n (u64), S (u64), values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.n as u64).to_le_bytes())?;
        out.write_all(&(self.s as u64).to_le_bytes())?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidInput("not a posterior dump".into()));
        }
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let s = u64::from_le_bytes(word) as usize;
        let mut data = Vec::with_capacity(n * s);
        for _ in 0..n * s {
            input.read_exact(&mut word)?;
            data.push(f64::from_le_bytes(word));
        }
        Ok(Self { n, s, data })
    }
}

fn require_draws(d: &DrawMatrix) -> Result<()> {
    if d.s < MIN_DRAWS {
        return Err(Error::TooSmall(format!(
            "{} retained draws, need at least {MIN_DRAWS}",
            d.s
        )));
    }
    Ok(())
}

/// Equal-tailed interval from type-7 quantiles of each row.
pub fn credible_interval(draws: &DrawMatrix, level: f64) -> Result<Vec<(f64, f64)>> {
    require_draws(draws)?;
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    let tail = (1.0 - level) / 2.0;
    let mut buf = vec![0.0; draws.s];
    Ok((0..draws.n)
        .map(|i| {
            buf.copy_from_slice(draws.row(i));
            buf.sort_by(f64::total_cmp);
            (quantile_sorted(&buf, tail), quantile_sorted(&buf, 1.0 - tail))
        })
        .collect())
}

/// Posterior probability of an above-average effect,
/// `D_i = mean_s I(theta_s(x_i) >= mean_i theta_s(x_i))`, ties scoring 1/2.
///
/// A tie is a value within a few ulps of the draw mean, so individuals with
/// bit-identical draws tie even when the mean itself rounds.
pub fn posterior_d_statistics(draws: &DrawMatrix) -> Result<Vec<f64>> {
    require_draws(draws)?;
    let (n, s) = (draws.n, draws.s);
    let mut score = vec![0.0; n];
    let mut column = vec![0.0; n];
    for k in 0..s {
        for (i, c) in column.iter_mut().enumerate() {
            *c = draws.data[i * s + k];
        }
        let avg = pairwise_sum(&column) / n as f64;
        let tol = 16.0 * f64::EPSILON * avg.abs().max(f64::MIN_POSITIVE);
        for (sc, &v) in score.iter_mut().zip(&column) {
            let diff = v - avg;
            *sc += if diff.abs() <= tol {
                0.5
            } else if diff > 0.0 {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok(score.into_iter().map(|v| v / s as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_draws_give_degenerate_interval() {
        let d = DrawMatrix::from_rows(&[vec![0.7; 200]]);
        assert_eq!(credible_interval(&d, 0.95).unwrap(), vec![(0.7, 0.7)]);
    }

    #[test]
    fn interval_matches_type7_quantiles() {
        let row: Vec<f64> = (1..=1000).map(|v| f64::from(v) * 0.01).collect();
        let d = DrawMatrix::from_rows(&[row]);
        let (lo, hi) = credible_interval(&d, 0.95).unwrap()[0];
        // h = 999 * 0.025 = 24.975 -> x[24] + 0.975 (x[25] - x[24]) = 25.975 * 0.01
        assert!((lo - 0.25975).abs() < 1e-12);
        // h = 999 * 0.975 = 974.025 -> 975.025 * 0.01
        assert!((hi - 9.75025).abs() < 1e-12);
    }

    #[test]
    fn too_few_draws_rejected() {
        let d = DrawMatrix::from_rows(&[vec![0.0; 50]]);
        assert!(credible_interval(&d, 0.95).is_err());
        assert!(posterior_d_statistics(&d).is_err());
    }

    #[test]
    fn symmetric_pair_gives_zero_and_one() {
        let a: Vec<f64> = (0..200).map(|k| 1.0 + f64::from(k % 7)).collect();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let d = posterior_d_statistics(&DrawMatrix::from_rows(&[a, b])).unwrap();
        assert_eq!(d, vec![1.0, 0.0]);
    }

    #[test]
    fn identical_individuals_tie_at_one_half() {
        let row: Vec<f64> = (0..300).map(|k| 0.1 * f64::from(k % 13) - 0.37).collect();
        let d = posterior_d_statistics(&DrawMatrix::from_rows(&vec![row; 1000])).unwrap();
        assert!(d.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn draw_layouts_agree() {
        let draws = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let m = DrawMatrix::from_draws(&draws, 3);
        assert_eq!(m.row(1), &[2.0, 5.0]);
        assert_eq!(m.row_means(), vec![2.5, 3.5, 4.5]);
    }

    #[test]
    fn binary_dump_header() {
        let m = DrawMatrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 8.0], vec![3.0, 4.0]]);
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"BARTPOST");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 24 + 6 * 8);
        assert!(DrawMatrix::read_binary(&b"NOTPOSTS"[..]).is_err());
    }

    proptest! {
        #[test]
        fn binary_dump_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20)) {
            let m = DrawMatrix::from_rows(&rows);
            let mut buf = Vec::new();
            m.write_binary(&mut buf).unwrap();
            prop_assert_eq!(DrawMatrix::read_binary(&buf[..]).unwrap(), m);
        }

        #[test]
        fn interval_brackets_the_mean(center in -5.0f64..5.0, spread in 0.01f64..3.0) {
            // symmetric unimodal synthetic draws
            let row: Vec<f64> = (0..400)
                .map(|k| center + spread * crate::stats::normal_quantile((k as f64 + 0.5) / 400.0))
                .collect();
            let d = DrawMatrix::from_rows(&[row]);
            let (lo, hi) = credible_interval(&d, 0.95).unwrap()[0];
            let m = d.row_means()[0];
            prop_assert!(lo <= m && m <= hi);
        }
    }
}

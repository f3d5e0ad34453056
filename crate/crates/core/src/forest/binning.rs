use crate::matrix::Matrix;

/// Bins are `u16`; covariates with more distinct values are quantile-binned.
pub const MAX_BINS: usize = 1 << 16;

/// Covariates mapped to ordinal bins. Splitting at cut `k` sends rows with
/// `bin <= k` left, which on the raw scale is `x <= cuts[k]`.
#[derive(Debug, Clone)]
pub struct BinnedColumns {
    bins: Vec<Vec<u16>>,
    cuts: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

fn column_cuts(col: &[f64]) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= MAX_BINS {
        return distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    // Quantile edges: cut after the distinct value reached at each rank.
    let n = sorted.len();
    let mut cuts = Vec::with_capacity(MAX_BINS - 1);
    for b in 1..MAX_BINS {
        let v = sorted[(b * n / MAX_BINS).min(n - 1)];
        let pos = distinct.partition_point(|&d| d <= v);
        if pos < distinct.len() {
            let c = 0.5 * (distinct[pos - 1] + distinct[pos]);
            if cuts.last().is_none_or(|&l| c > l) {
                cuts.push(c);
            }
        }
    }
    cuts
}

impl BinnedColumns {
    pub fn new(x: &Matrix) -> Self {
        let mut bins = Vec::with_capacity(x.ncols());
        let mut cuts = Vec::with_capacity(x.ncols());
        let values = x.columns();
        for col in &values {
            let c = column_cuts(col);
            bins.push(col.iter().map(|&v| c.partition_point(|&t| t < v) as u16).collect());
            cuts.push(c);
        }
        Self { bins, cuts, values }
    }

    pub fn ncols(&self) -> usize {
        self.bins.len()
    }

    pub fn nrows(&self) -> usize {
        self.bins.first().map_or(0, Vec::len)
    }

    pub fn bin(&self, var: usize, row: usize) -> u16 {
        self.bins[var][row]
    }

    pub fn column(&self, var: usize) -> &[u16] {
        &self.bins[var]
    }

    /// Number of bins of a variable.
    pub fn num_bins(&self, var: usize) -> usize {
        self.cuts[var].len() + 1
    }

    pub fn cut_value(&self, var: usize, k: usize) -> f64 {
        self.cuts[var][k]
    }

    pub fn value(&self, var: usize, row: usize) -> f64 {
        self.values[var][row]
    }

    /// Raw-scale threshold for splitting `rows` at bin cut `k`: the midpoint
    /// between the largest value going left and the smallest going right.
    pub fn split_threshold(&self, var: usize, k: usize, rows: &[usize]) -> f64 {
        let (bins, vals) = (&self.bins[var], &self.values[var]);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for &r in rows {
            if bins[r] as usize <= k {
                lo = lo.max(vals[r]);
            } else {
                hi = hi.min(vals[r]);
            }
        }
        if lo.is_finite() && hi.is_finite() {
            lo + 0.5 * (hi - lo)
        } else {
            self.cuts[var][k]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_agree_with_cut_values() {
        let n = 3000;
        let data: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1013) as f64 / 10.0).collect();
        let x = Matrix::from_row_major(n, 1, data.clone()).unwrap();
        let b = BinnedColumns::new(&x);
        assert_eq!(b.num_bins(0), 1013);
        let data: Vec<f64> = (0..100_000).map(|i| ((i as u64 * 7919) % 99_991) as f64 + 0.5 * (i % 2) as f64).collect();
        let n = data.len();
        let x = Matrix::from_row_major(n, 1, data.clone()).unwrap();
        let b = BinnedColumns::new(&x);
        assert!(b.num_bins(0) <= MAX_BINS);
        for k in 0..b.num_bins(0) - 1 {
            let c = b.cut_value(0, k);
            for (i, &v) in data.iter().enumerate() {
                assert_eq!(b.bin(0, i) as usize <= k, v <= c);
            }
        }
    }

    #[test]
    fn few_distinct_values_are_exact() {
        let x = Matrix::from_row_major(5, 1, vec![0.0, 1.0, 0.0, 2.0, 1.0]).unwrap();
        let b = BinnedColumns::new(&x);
        assert_eq!(b.column(0), &[0, 1, 0, 2, 1]);
        assert_eq!(b.cut_value(0, 0), 0.5);
    }
}

//! Monte-Carlo summaries of `results.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::run::RESULTS_HEADER;

pub const METRICS: [&str; 7] = ["bias", "rmse", "misclass", "hl", "coverage", "null_flag_prop", "censor_rate"];

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: csv::Error },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema mismatch in column {index}: expected '{expected}', found '{found}'")]
    Schema {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("row {row}: column '{column}' holds '{value}', not a number")]
    Value { row: usize, column: String, value: String },
    #[error("no data rows")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub family: String,
    pub dgp: String,
    pub estimator: String,
    pub variant: String,
    pub reps_used: usize,
    /// `(mean, se)` per entry of [`METRICS`].
    pub stats: Vec<(f64, f64)>,
}

impl AggregateRow {
    pub fn metric(&self, name: &str) -> Option<(f64, f64)> {
        METRICS.iter().position(|m| *m == name).map(|j| self.stats[j])
    }
}

type Key = (String, String, String, String);

/// Mean and `sd / sqrt(reps)` per group. Values are sorted inside each group
/// before summation, so the output does not depend on input row order.
pub fn aggregate_rows(records: &[csv::StringRecord]) -> Result<Vec<AggregateRow>, AggregateError> {
    if records.is_empty() {
        return Err(AggregateError::Empty);
    }
    let mut groups: BTreeMap<Key, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string(), rec[3].to_string());
        let mut vals = Vec::with_capacity(METRICS.len());
        for (j, name) in METRICS.iter().enumerate() {
            let raw = &rec[7 + j];
            let v: f64 = raw.trim().parse().map_err(|_| AggregateError::Value {
                row: i + 1,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            vals.push(v);
        }
        let cols = groups.entry(key).or_insert_with(|| vec![Vec::new(); METRICS.len()]);
        for (col, v) in cols.iter_mut().zip(vals) {
            col.push(v);
        }
    }
    Ok(groups
        .into_iter()
        .map(|((family, dgp, estimator, variant), mut cols)| {
            let reps_used = cols[0].len();
            let stats = cols
                .iter_mut()
                .map(|c| {
                    c.sort_by(f64::total_cmp);
                    mean_se(c)
                })
                .collect();
            AggregateRow {
                family,
                dgp,
                estimator,
                variant,
                reps_used,
                stats,
            }
        })
        .collect())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    (mean, sd / n.sqrt())
}

pub fn read_results(path: &Path) -> Result<Vec<csv::StringRecord>, AggregateError> {
    let read_err = |source| AggregateError::Read {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(read_err)?;
    let header = reader.headers().map_err(read_err)?.clone();
    check_header(&header)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(read_err)?;
        if rec.len() != RESULTS_HEADER.len() {
            let index = rec.len().min(RESULTS_HEADER.len());
            return Err(AggregateError::Schema {
                index: index + 1,
                expected: RESULTS_HEADER.get(index).unwrap_or(&"<end of row>").to_string(),
                found: format!("a row with {} fields", rec.len()),
            });
        }
        rows.push(rec);
    }
    Ok(rows)
}

fn check_header(header: &csv::StringRecord) -> Result<(), AggregateError> {
    for index in 0..header.len().max(RESULTS_HEADER.len()) {
        let expected = RESULTS_HEADER.get(index).copied().unwrap_or("<none>");
        let found = header.get(index).unwrap_or("<missing>");
        if expected != found {
            return Err(AggregateError::Schema {
                index: index + 1,
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
    }
    Ok(())
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("family,dgp,estimator,variant,reps_used");
    for m in METRICS {
        let _ = write!(s, ",{m}_mean,{m}_se");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{},{}", r.family, r.dgp, r.estimator, r.variant, r.reps_used);
        for (m, se) in &r.stats {
            let _ = write!(s, ",{m},{se}");
        }
        s.push('\n');
    }
    s
}

/// Reads `input`, aggregates and writes `output`.
pub fn aggregate(input: &Path, output: &Path) -> Result<Vec<AggregateRow>, AggregateError> {
    let rows = aggregate_rows(&read_results(input)?)?;
    std::fs::write(output, aggregate_csv(&rows)).map_err(|source| AggregateError::Write {
        path: output.to_path_buf(),
        source,
    })?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(family: &str, dgp: &str, rep: usize, coverage: f64) -> csv::StringRecord {
        let cov = coverage.to_string();
        let rep = rep.to_string();
        csv::StringRecord::from(vec![
            family, dgp, "csf", "default", &rep, "1", "500", "0.1", "0.2", "0.3", "4", &cov, "0", "0.2",
        ])
    }

    #[test]
    fn single_row_has_zero_se() {
        let rows = aggregate_rows(&[record("hu", "1", 0, 0.9)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].metric("coverage"), Some((0.9, 0.0)));
        assert_eq!(rows[0].metric("bias"), Some((0.1, 0.0)));
        assert_eq!(rows[0].reps_used, 1);
    }

    #[test]
    fn two_rows_hand_computation() {
        let rows = aggregate_rows(&[record("hu", "1", 0, 0.9), record("hu", "1", 1, 0.8)]).unwrap();
        let (m, se) = rows[0].metric("coverage").unwrap();
        assert!((m - 0.85).abs() < 1e-12);
        assert!((se - 0.05).abs() < 1e-12);
        assert_eq!(rows[0].reps_used, 2);
    }

    #[test]
    fn keys_are_verbatim_and_grouped() {
        let rows = aggregate_rows(&[
            record("cui", "2-null", 0, 0.5),
            record("Hu", "01", 0, 0.7),
            record("cui", "2-null", 1, 0.6),
        ])
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().any(|r| r.family == "Hu" && r.dgp == "01"));
        assert!(rows.iter().any(|r| r.dgp == "2-null" && r.reps_used == 2));
    }

    #[test]
    fn permutation_invariant() {
        let covs = [0.1, 0.7, 0.30000000000000004, 1e-17, 0.9, 0.2];
        let recs: Vec<_> = covs.iter().enumerate().map(|(i, &c)| record("hu", "1", i, c)).collect();
        let base = aggregate_csv(&aggregate_rows(&recs).unwrap());
        let mut shuffled = recs.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        assert_eq!(aggregate_csv(&aggregate_rows(&shuffled).unwrap()), base);
    }

    #[test]
    fn schema_errors_name_the_column() {
        let mut h = csv::StringRecord::from(RESULTS_HEADER.to_vec());
        assert!(check_header(&h).is_ok());
        h = csv::StringRecord::from(
            RESULTS_HEADER
                .iter()
                .map(|c| if *c == "coverage" { "cover" } else { c })
                .collect::<Vec<_>>(),
        );
        let e = check_header(&h).unwrap_err().to_string();
        assert!(e.contains("coverage") && e.contains("cover"), "{e}");
        let short = csv::StringRecord::from(RESULTS_HEADER[..13].to_vec());
        assert!(check_header(&short).unwrap_err().to_string().contains("censor_rate"));
    }

    #[test]
    fn bad_values_name_the_column() {
        let mut r: Vec<String> = record("hu", "1", 0, 0.9).iter().map(String::from).collect();
        r[8] = "oops".into();
        let e = aggregate_rows(&[csv::StringRecord::from(r)]).unwrap_err().to_string();
        assert!(e.contains("rmse"), "{e}");
        assert!(matches!(aggregate_rows(&[]), Err(AggregateError::Empty)));
    }
}

//! Pearson correlation and correlation matrices.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input is constant")]
    ConstantInput,
    #[error("need at least two samples, got {0}")]
    TooShort(usize),
}

pub type Result<T> = std::result::Result<T, StatsError>;

const DRIFT: f64 = 1e-12;

/// Pearson r (population form). Floating drift beyond ±1 by at most 1e-12 is
/// clamped.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooShort(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    let r = sxy / (sxx * syy).sqrt();
    if r.abs() > 1.0 && r.abs() <= 1.0 + DRIFT {
        return Ok(r.signum());
    }
    Ok(r)
}

/// Symmetric matrix of pairwise Pearson r. `None` marks an undefined pair
/// (either column constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub samples: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.values[i][j]
    }

    /// Square CSV with `NA` for undefined cells.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| match v {
                Some(r) => r.to_string(),
                None => "NA".to_string(),
            }));
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

/// Pairwise Pearson over named columns.
pub fn correlation_matrix(names: &[String], columns: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    assert_eq!(names.len(), columns.len(), "one name per column");
    let samples = columns.first().map(Vec::len).unwrap_or(0);
    if samples < 2 {
        return Err(StatsError::TooShort(samples));
    }
    for c in columns {
        if c.len() != samples {
            return Err(StatsError::LengthMismatch(samples, c.len()));
        }
    }
    let m = columns.len();
    let constant: Vec<bool> = columns
        .iter()
        .map(|c| c.iter().all(|v| *v == c[0]))
        .collect();
    let mut values = vec![vec![None; m]; m];
    for i in 0..m {
        if constant[i] {
            continue;
        }
        values[i][i] = Some(1.0);
        for j in i + 1..m {
            if constant[j] {
                continue;
            }
            let r = match pearson(&columns[i], &columns[j]) {
                Ok(r) => Some(r),
                Err(StatsError::ConstantInput) => None,
                Err(e) => return Err(e),
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: names.to_vec(),
        values,
        samples,
    })
}

/// Correlation matrix over the columns of a matrix.
pub fn correlation_matrix_of(names: &[String], matrix: &Matrix) -> Result<CorrelationMatrix> {
    let cols: Vec<Vec<f64>> = (0..matrix.cols()).map(|j| matrix.column(j)).collect();
    correlation_matrix(names, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // cov sum 4, variance sums 5 and 5
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        assert_eq!(pearson(&[1.0], &[1.0]).unwrap_err(), StatsError::TooShort(1));
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]).unwrap_err(), StatsError::LengthMismatch(2, 1));
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]).unwrap_err(), StatsError::ConstantInput);
    }

    #[test]
    fn matrix_structure() {
        let names: Vec<String> = ["x", "2x", "c"].iter().map(|s| s.to_string()).collect();
        let x = vec![1.0, 5.0, 2.0, 8.0];
        let cols = vec![x.clone(), x.iter().map(|v| 2.0 * v).collect(), vec![3.0; 4]];
        let m = correlation_matrix(&names, &cols).unwrap();
        assert_eq!(m.values[0][1], Some(1.0));
        assert_eq!(m.values[0][0], Some(1.0));
        assert_eq!(m.values[0][2], None);
        assert_eq!(m.values[2][2], None);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
        let mut buf = vec![];
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("NA"));
    }

    #[test]
    fn row_permutation_invariance() {
        let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let a = vec![1.0, 4.0, 2.0, 9.0, 3.0];
        let b = vec![2.0, 1.0, 7.0, 3.0, 3.5];
        let m1 = correlation_matrix(&names, &[a.clone(), b.clone()]).unwrap();
        let perm = [4, 2, 0, 3, 1];
        let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let m2 = correlation_matrix(&names, &[pa, pb]).unwrap();
        assert!((m1.values[0][1].unwrap() - m2.values[0][1].unwrap()).abs() < 1e-12);
    }
}

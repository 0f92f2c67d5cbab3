use std::collections::HashMap;

use rayon::prelude::*;

use super::{ClusterError, Result};
use crate::matrix::{dist, sq_dist, Matrix};

/// Sum of squared distances from each row to its assigned centroid.
pub fn sse(matrix: &Matrix, centroids: &Matrix, assignments: &[usize]) -> Result<f64> {
    if assignments.len() != matrix.rows() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} assignments for {} rows",
            assignments.len(),
            matrix.rows()
        )));
    }
    if centroids.rows() > 0 && centroids.cols() != matrix.cols() {
        return Err(ClusterError::ShapeMismatch(format!(
            "centroids have {} columns, data {}",
            centroids.cols(),
            matrix.cols()
        )));
    }
    let mut total = 0.0;
    for (row, &a) in matrix.iter_rows().zip(assignments) {
        if a >= centroids.rows() {
            return Err(ClusterError::ShapeMismatch(format!(
                "assignment {a} with {} centroids",
                centroids.rows()
            )));
        }
        total += sq_dist(row, centroids.row(a));
    }
    Ok(total)
}

/// Mean silhouette coefficient. Points in singleton clusters score 0.
///
/// Per-cluster distance sums accumulate over rows in index order, so the
/// result is bit-identical under any relabelling of the clusters.
pub fn silhouette(matrix: &Matrix, assignments: &[usize]) -> Result<f64> {
    let n = matrix.rows();
    if assignments.len() != n {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} assignments for {n} rows",
            assignments.len()
        )));
    }
    let mut dense: HashMap<usize, usize> = HashMap::new();
    let labels: Vec<usize> = assignments
        .iter()
        .map(|a| {
            let next = dense.len();
            *dense.entry(*a).or_insert(next)
        })
        .collect();
    let k = dense.len();
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let xi = matrix.row(i);
            for (j, &l) in labels.iter().enumerate() {
                if j != i {
                    sums[l] += dist(xi, matrix.row(j));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    let s = scores.iter().sum::<f64>() / n as f64;
    Ok(s.clamp(-1.0, 1.0))
}

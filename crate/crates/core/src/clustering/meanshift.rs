use rayon::prelude::*;

use super::{nearest, ClusterError, ClusterModel, Method, Result};
use crate::matrix::{dist, sq_dist, Matrix};

const MAX_SHIFT_ITER: usize = 300;
/// A point is stationary once a shift moves it less than this times the bandwidth.
pub const STATIONARY_FRACTION: f64 = 1e-4;

/// Mean distance from each point to its `ceil(quantile * (n - 1))`-th nearest
/// neighbour.
pub fn estimate_bandwidth(matrix: &Matrix, quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(ClusterError::InvalidParameter(format!(
            "quantile must be in (0, 1], got {quantile}"
        )));
    }
    let n = matrix.rows();
    if n < 2 {
        return Err(ClusterError::TooFewRows { rows: n, k: 2 });
    }
    if !matrix.is_finite() {
        return Err(ClusterError::NonFiniteInput);
    }
    let rank = ((quantile * (n - 1) as f64).ceil() as usize).clamp(1, n - 1);
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = matrix.row(i);
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| dist(xi, matrix.row(j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect();
    Ok(per_point.iter().sum::<f64>() / n as f64)
}

/// One flat-kernel step: the mean of all rows within `bandwidth` of `x`.
pub fn shift_once(matrix: &Matrix, x: &[f64], bandwidth: f64) -> Vec<f64> {
    let bw2 = bandwidth * bandwidth;
    let mut sum = vec![0.0; x.len()];
    let mut count = 0usize;
    for row in matrix.iter_rows() {
        if sq_dist(row, x) <= bw2 {
            count += 1;
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    if count == 0 {
        return x.to_vec();
    }
    sum.iter_mut().for_each(|s| *s /= count as f64);
    sum
}

fn climb(matrix: &Matrix, start: &[f64], bandwidth: f64) -> (Vec<f64>, usize, bool) {
    let stop = STATIONARY_FRACTION * bandwidth;
    let mut x = start.to_vec();
    for it in 1..=MAX_SHIFT_ITER {
        let next = shift_once(matrix, &x, bandwidth);
        if dist(&next, &x) < stop {
            // x itself is stationary: its next shift is below the threshold
            return (x, it, true);
        }
        x = next;
    }
    (x, MAX_SHIFT_ITER, false)
}

/// Flat-kernel mean-shift. Every row climbs to a stationary point; modes
/// closer than `bandwidth` are merged, keeping the mode with more rows inside
/// its window (lowest starting row on ties). Rows go to the nearest mode.
/// `seed` is recorded only; the procedure is deterministic.
pub fn mean_shift(matrix: &Matrix, bandwidth: f64, seed: u64) -> Result<ClusterModel> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(ClusterError::ZeroBandwidth(bandwidth));
    }
    if !matrix.is_finite() {
        return Err(ClusterError::NonFiniteInput);
    }
    let n = matrix.rows();
    if n == 0 {
        return Err(ClusterError::TooFewRows { rows: 0, k: 1 });
    }
    let climbed: Vec<(Vec<f64>, usize, bool)> = (0..n)
        .into_par_iter()
        .map(|i| climb(matrix, matrix.row(i), bandwidth))
        .collect();
    let iterations = climbed.iter().map(|c| c.1).max().unwrap_or(0);
    let converged = climbed.iter().all(|c| c.2);

    let bw2 = bandwidth * bandwidth;
    let populations: Vec<usize> = climbed
        .par_iter()
        .map(|(mode, _, _)| matrix.iter_rows().filter(|r| sq_dist(r, mode) <= bw2).count())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| populations[b].cmp(&populations[a]).then(a.cmp(&b)));

    let mut kept: Vec<&[f64]> = Vec::new();
    for i in order {
        let mode = climbed[i].0.as_slice();
        if kept.iter().all(|m| dist(m, mode) >= bandwidth) {
            kept.push(mode);
        }
    }
    let centroids = Matrix::from_rows(&kept);
    let mut assignments = Vec::with_capacity(n);
    let mut sse = 0.0;
    for row in matrix.iter_rows() {
        let (c, d) = nearest(row, &centroids);
        assignments.push(c);
        sse += d;
    }
    Ok(ClusterModel {
        method: Method::Meanshift,
        k: centroids.rows(),
        seed,
        centroids: centroids.to_rows(),
        assignments,
        sse,
        silhouette: None,
        iterations_run: iterations,
        converged,
        bandwidth: Some(bandwidth),
        sse_history: vec![],
    })
}

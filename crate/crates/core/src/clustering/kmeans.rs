use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_input, derive_seed, means, nearest, ClusterError, ClusterModel, Method, Result};
use crate::matrix::{dist, sq_dist, Matrix};

/// k-means++ seeding: the first centre uniformly, each further centre with
/// probability proportional to the squared distance to the closest chosen one.
pub fn kmeans_plus_plus(matrix: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = matrix.rows();
    let mut centroids = Matrix::zeros(k, matrix.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(matrix.row(first));
    let mut d2: Vec<f64> = matrix.iter_rows().map(|r| sq_dist(r, matrix.row(first))).collect();
    let mut chosen = vec![first];
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && target < acc {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target == total
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).unwrap())
        } else {
            // every point coincides with a centre already
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        centroids.row_mut(c).copy_from_slice(matrix.row(pick));
        for (i, row) in matrix.iter_rows().enumerate() {
            let d = sq_dist(row, matrix.row(pick));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn assign(matrix: &Matrix, centroids: &Matrix, assignments: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut total = 0.0;
    for (i, row) in matrix.iter_rows().enumerate() {
        let (c, d) = nearest(row, centroids);
        if assignments[i] != c {
            assignments[i] = c;
            changed = true;
        }
        total += d;
    }
    (changed, total)
}

fn objective(matrix: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    matrix
        .iter_rows()
        .zip(assignments)
        .map(|(r, &a)| sq_dist(r, centroids.row(a)))
        .sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Only points whose cluster keeps at least one other member are eligible.
fn repair_empty(matrix: &Matrix, centroids: &Matrix, assignments: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in matrix.iter_rows().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(row, centroids.row(a));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            counts[assignments[i]] -= 1;
            assignments[i] = j;
            counts[j] = 1;
        }
    }
}

/// Lloyd's algorithm from a seeded k-means++ start. Stops when an assignment
/// pass changes nothing (exact fixed point) or the largest centroid move falls
/// below `tol`.
pub fn kmeans(matrix: &Matrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterModel> {
    check_input(matrix, k)?;
    if !(tol >= 0.0) {
        return Err(ClusterError::InvalidParameter(format!("tol {tol}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(matrix, k, &mut rng);
    let mut assignments = vec![0usize; matrix.rows()];
    let (_, s0) = assign(matrix, &centroids, &mut assignments);
    let mut history = vec![s0];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        repair_empty(matrix, &centroids, &mut assignments, k);
        let (mut updated, counts) = means(matrix, &assignments, k);
        for (c, n) in counts.iter().enumerate() {
            if *n == 0 {
                // fewer distinct points than k: keep the old centre
                updated.row_mut(c).copy_from_slice(centroids.row(c));
            }
        }
        let movement = (0..k)
            .map(|c| dist(centroids.row(c), updated.row(c)))
            .fold(0.0, f64::max);
        centroids = updated;
        history.push(objective(matrix, &centroids, &assignments));

        let (changed, s) = assign(matrix, &centroids, &mut assignments);
        history.push(s);
        if !changed {
            converged = true;
            break;
        }
        if movement < tol {
            break;
        }
    }

    let sse = objective(matrix, &centroids, &assignments);
    Ok(ClusterModel {
        method: Method::Kmeans,
        k,
        seed,
        centroids: centroids.to_rows(),
        assignments,
        sse,
        silhouette: None,
        iterations_run: iterations,
        converged,
        bandwidth: None,
        sse_history: history,
    })
}

/// Best (lowest SSE) of `n_init` k-means runs with derived seeds; the model
/// keeps the caller's seed. Ties keep the earliest run.
pub fn kmeans_best_of(
    matrix: &Matrix,
    k: usize,
    seed: u64,
    n_init: usize,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for run in 0..n_init.max(1) {
        let run_seed = if run == 0 { seed } else { derive_seed(seed, run as u64) };
        let m = kmeans(matrix, k, run_seed, max_iter, tol)?;
        if best.as_ref().is_none_or(|b| m.sse < b.sse) {
            best = Some(m);
        }
    }
    let mut best = best.expect("at least one run");
    best.seed = seed;
    Ok(best)
}

const MINIBATCH_TOL: f64 = 1e-7;

/// Mini-batch k-means with per-centre learning rate `1 / count`. Each
/// iteration samples `batch_size` distinct rows (all rows, in order, when the
/// batch covers the data), assigns them against the current centres and
/// streams the updates. A final full pass assigns every row.
pub fn minibatch_kmeans(
    matrix: &Matrix,
    k: usize,
    seed: u64,
    batch_size: usize,
    max_iter: usize,
) -> Result<ClusterModel> {
    check_input(matrix, k)?;
    if batch_size == 0 {
        return Err(ClusterError::InvalidParameter("batch_size must be >= 1".into()));
    }
    let n = matrix.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(matrix, k, &mut rng);
    let mut counts = vec![0u64; k];
    let mut iterations = 0;
    let mut converged = false;
    let mut batch_assign = Vec::with_capacity(batch_size.min(n));

    while iterations < max_iter {
        iterations += 1;
        let batch: Vec<usize> = if batch_size >= n {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, batch_size).into_vec()
        };
        batch_assign.clear();
        batch_assign.extend(batch.iter().map(|&i| nearest(matrix.row(i), &centroids).0));
        let before = centroids.clone();
        for (&i, &c) in batch.iter().zip(&batch_assign) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (cv, xv) in centroids.row_mut(c).iter_mut().zip(matrix.row(i)) {
                *cv += eta * (xv - *cv);
            }
        }
        let movement = (0..k)
            .map(|c| dist(before.row(c), centroids.row(c)))
            .fold(0.0, f64::max);
        if movement < MINIBATCH_TOL {
            converged = true;
            break;
        }
    }

    let mut assignments = vec![0usize; n];
    assign(matrix, &centroids, &mut assignments);
    let mut pop = vec![0usize; k];
    for &a in &assignments {
        pop[a] += 1;
    }
    if pop.contains(&0) {
        repair_empty(matrix, &centroids, &mut assignments, k);
        for c in 0..k {
            if pop[c] == 0 {
                if let Some(i) = assignments.iter().position(|&a| a == c) {
                    centroids.row_mut(c).copy_from_slice(matrix.row(i));
                }
            }
        }
    }
    let sse = objective(matrix, &centroids, &assignments);
    Ok(ClusterModel {
        method: Method::Minibatch,
        k,
        seed,
        centroids: centroids.to_rows(),
        assignments,
        sse,
        silhouette: None,
        iterations_run: iterations,
        converged,
        bandwidth: None,
        sse_history: vec![],
    })
}

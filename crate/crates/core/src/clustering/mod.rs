//! Clustering of feature rows: Lloyd k-means with k-means++ seeding,
//! mini-batch k-means, flat-kernel mean-shift and Ward agglomerative
//! clustering, plus SSE/silhouette scoring and knee-based selection of k.
//!
//! Distances are squared Euclidean throughout. Every stochastic choice draws
//! from a ChaCha stream seeded by the caller; parallel sections reduce in a
//! fixed order so results do not depend on thread scheduling.

mod agglomerative;
mod kmeans;
mod knee;
mod meanshift;
mod quality;

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{sq_dist, Matrix};

pub use agglomerative::{agglomerative, ward_merges, Merge};
pub use kmeans::{kmeans, kmeans_best_of, kmeans_plus_plus, minibatch_kmeans};
pub use knee::{knee_locate, KneeResult};
pub use meanshift::{estimate_bandwidth, mean_shift, shift_once};
pub use quality::{silhouette, sse};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_QUANTILE: f64 = 0.3;
pub const DEFAULT_N_INIT: usize = 10;
pub const DEFAULT_K_SWEEP: (usize, usize) = (1, 10);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("{rows} rows cannot form {k} clusters")]
    TooFewRows { rows: usize, k: usize },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("bandwidth must be positive, got {0}")]
    ZeroBandwidth(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("knee detection needs at least three points, got {0}")]
    TooFewPoints(usize),
    #[error("curve has no knee")]
    NoKnee,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kmeans,
    Minibatch,
    Meanshift,
    Agglomerative,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Minibatch => "minibatch",
            Method::Meanshift => "meanshift",
            Method::Agglomerative => "agglomerative",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_lowercase().replace(['-', '_'], "").as_str() {
            "kmeans" => Ok(Method::Kmeans),
            "minibatch" | "minibatchkmeans" => Ok(Method::Minibatch),
            "meanshift" => Ok(Method::Meanshift),
            "agglomerative" | "ward" => Ok(Method::Agglomerative),
            other => Err(format!("unknown method {other}")),
        }
    }
}

/// Fitted clustering of a feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    #[serde(skip)]
    pub assignments: Vec<usize>,
    pub sse: f64,
    pub silhouette: Option<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bandwidth: Option<f64>,
    /// Objective after every assignment and every update step (k-means only).
    #[serde(skip)]
    pub sse_history: Vec<f64>,
}

impl ClusterModel {
    pub fn centroid_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.centroids)
    }

    /// Points per cluster.
    pub fn populations(&self) -> Vec<usize> {
        let mut pop = vec![0; self.k];
        for &a in &self.assignments {
            pop[a] += 1;
        }
        pop
    }

    /// Fills in the silhouette score (left empty when k = 1).
    pub fn with_silhouette(mut self, matrix: &Matrix) -> Result<Self> {
        self.silhouette = if self.populations().iter().filter(|p| **p > 0).count() >= 2 {
            Some(silhouette(matrix, &self.assignments)?)
        } else {
            None
        };
        Ok(self)
    }

    pub fn write_assignments_csv<W: Write>(
        &self,
        keys: &[String],
        out: W,
    ) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket", "cluster"])?;
        for (key, a) in keys.iter().zip(&self.assignments) {
            w.write_record([key.as_str(), &a.to_string()])?;
        }
        w.flush()
    }
}

/// Tunables shared by the fitting entry points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub batch_size: usize,
    /// k-means restarts when sweeping k.
    pub n_init: usize,
    /// Mean-shift bandwidth quantile.
    pub quantile: f64,
    /// Fixed mean-shift bandwidth; estimated from `quantile` when absent.
    pub bandwidth: Option<f64>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            batch_size: DEFAULT_BATCH_SIZE,
            n_init: DEFAULT_N_INIT,
            quantile: DEFAULT_QUANTILE,
            bandwidth: None,
        }
    }
}

/// Independent per-run seed derived from a base seed (splitmix64 step).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits `method` with `k` clusters. Mean-shift ignores `k`.
pub fn fit(method: Method, matrix: &Matrix, k: usize, params: &ClusterParams) -> Result<ClusterModel> {
    match method {
        Method::Kmeans => kmeans_best_of(
            matrix,
            k,
            params.seed,
            params.n_init.max(1),
            params.max_iter,
            params.tol,
        ),
        Method::Minibatch => {
            minibatch_kmeans(matrix, k, params.seed, params.batch_size, params.max_iter)
        }
        Method::Agglomerative => agglomerative(matrix, k),
        Method::Meanshift => {
            let bw = match params.bandwidth {
                Some(b) => b,
                None => estimate_bandwidth(matrix, params.quantile)?,
            };
            mean_shift(matrix, bw, params.seed)
        }
    }
}

/// SSE for each k in `k_min..=k_max` (clamped to the row count).
pub fn sse_curve(
    matrix: &Matrix,
    k_min: usize,
    k_max: usize,
    method: Method,
    params: &ClusterParams,
) -> Result<Vec<(usize, f64)>> {
    if method == Method::Meanshift {
        return Err(ClusterError::InvalidParameter(
            "mean-shift chooses its own cluster count".into(),
        ));
    }
    let k_max = k_max.min(matrix.rows());
    if k_min < 1 || k_min > k_max {
        return Err(ClusterError::InvalidParameter(format!(
            "k range {k_min}..={k_max}"
        )));
    }
    (k_min..=k_max)
        .into_par_iter()
        .map(|k| fit(method, matrix, k, params).map(|m| (k, m.sse)))
        .collect()
}

/// Runs `method` for each k in range and returns the k with the highest
/// silhouette (smallest k on ties) and the per-k scores.
pub fn select_k_silhouette(
    matrix: &Matrix,
    k_min: usize,
    k_max: usize,
    method: Method,
    params: &ClusterParams,
) -> Result<(usize, Vec<(usize, f64)>)> {
    if k_min < 2 || k_min > k_max || k_max + 1 > matrix.rows() {
        return Err(ClusterError::InvalidParameter(format!(
            "silhouette range needs 2 <= k_min <= k_max <= rows - 1, got {k_min}..={k_max} with {} rows",
            matrix.rows()
        )));
    }
    if method == Method::Meanshift {
        return Err(ClusterError::InvalidParameter(
            "mean-shift chooses its own cluster count".into(),
        ));
    }
    let scores: Vec<(usize, f64)> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let m = fit(method, matrix, k, params)?;
            Ok((k, silhouette(matrix, &m.assignments)?))
        })
        .collect::<Result<_>>()?;
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.1 > best.1 {
            best = *s;
        }
    }
    Ok((best.0, scores))
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

pub(crate) fn check_input(matrix: &Matrix, k: usize) -> Result<()> {
    if !matrix.is_finite() {
        return Err(ClusterError::NonFiniteInput);
    }
    if k == 0 || matrix.rows() < k {
        return Err(ClusterError::TooFewRows {
            rows: matrix.rows(),
            k,
        });
    }
    Ok(())
}

/// Columnwise mean of the given rows.
pub(crate) fn means(matrix: &Matrix, assignments: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let d = matrix.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (row, &a) in matrix.iter_rows().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, n) in counts.iter().enumerate() {
        if *n > 0 {
            for s in sums.row_mut(c) {
                *s /= *n as f64;
            }
        }
    }
    (sums, counts)
}

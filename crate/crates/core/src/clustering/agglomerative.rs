use super::{check_input, means, ClusterModel, Method, Result};
use crate::matrix::{sq_dist, Matrix};

/// One merge of the Ward hierarchy. `a` and `b` are representative row
/// indices (the lowest row of each cluster); `cost` is the increase in
/// within-cluster sum of squares caused by the merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub cost: f64,
}

struct Active {
    size: Vec<usize>,
    centroid: Matrix,
    alive: Vec<bool>,
}

impl Active {
    fn ward(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.size[a] as f64, self.size[b] as f64);
        na * nb / (na + nb) * sq_dist(self.centroid.row(a), self.centroid.row(b))
    }
}

/// Full Ward hierarchy in merge-cost order, built with the nearest-neighbour
/// chain algorithm (valid because Ward linkage is reducible). Cluster state is
/// kept as size and centroid, so memory stays linear in the row count.
pub fn ward_merges(matrix: &Matrix) -> Vec<Merge> {
    let n = matrix.rows();
    let mut st = Active {
        size: vec![1; n],
        centroid: matrix.clone(),
        alive: vec![true; n],
    };
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(st.alive.iter().position(|a| *a).unwrap());
        }
        let a = *chain.last().unwrap();
        let prev = if chain.len() >= 2 {
            Some(chain[chain.len() - 2])
        } else {
            None
        };
        // the previous chain element wins ties, which guarantees termination
        let mut best = prev;
        let mut best_d = prev.map(|p| st.ward(a, p)).unwrap_or(f64::INFINITY);
        for b in 0..n {
            if b == a || !st.alive[b] {
                continue;
            }
            let d = st.ward(a, b);
            if d < best_d {
                best_d = d;
                best = Some(b);
            }
        }
        let b = best.expect("another active cluster exists");
        if Some(b) == prev {
            chain.pop();
            chain.pop();
            let (keep, drop) = if a < b { (a, b) } else { (b, a) };
            let (nk, nd) = (st.size[keep] as f64, st.size[drop] as f64);
            let merged: Vec<f64> = st
                .centroid
                .row(keep)
                .iter()
                .zip(st.centroid.row(drop))
                .map(|(x, y)| (nk * x + nd * y) / (nk + nd))
                .collect();
            st.centroid.row_mut(keep).copy_from_slice(&merged);
            st.size[keep] += st.size[drop];
            st.alive[drop] = false;
            merges.push(Merge {
                a: keep,
                b: drop,
                cost: best_d,
            });
            remaining -= 1;
        } else {
            chain.push(b);
        }
    }
    // stable: equal costs keep discovery order
    merges.sort_by(|x, y| x.cost.total_cmp(&y.cost));
    merges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Bottom-up Ward clustering cut at `k` clusters. Labels are numbered by
/// first appearance in row order.
pub fn agglomerative(matrix: &Matrix, k: usize) -> Result<ClusterModel> {
    check_input(matrix, k)?;
    let n = matrix.rows();
    let merges = ward_merges(matrix);
    let mut parent: Vec<usize> = (0..n).collect();
    for m in merges.iter().take(n - k) {
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let mut assignments = Vec::with_capacity(n);
    for i in 0..n {
        let r = find(&mut parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        assignments.push(label_of_root[r]);
    }
    let (centroids, _) = means(matrix, &assignments, k);
    let sse = matrix
        .iter_rows()
        .zip(&assignments)
        .map(|(r, &a)| sq_dist(r, centroids.row(a)))
        .sum();
    Ok(ClusterModel {
        method: Method::Agglomerative,
        k,
        seed: 0,
        centroids: centroids.to_rows(),
        assignments,
        sse,
        silhouette: None,
        iterations_run: n - k,
        converged: true,
        bandwidth: None,
        sse_history: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_pair_merges_first() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [10.0]]);
        let merges = ward_merges(&x);
        assert_eq!((merges[0].a, merges[0].b), (0, 1));
        assert_eq!(merges[0].cost, 0.5);
        let m = agglomerative(&x, 2).unwrap();
        assert_eq!(m.assignments, vec![0, 0, 1]);
    }

    #[test]
    fn singletons_at_k_n() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 4.0]]);
        let m = agglomerative(&x, 3).unwrap();
        assert_eq!(m.sse, 0.0);
        assert_eq!(m.assignments, vec![0, 1, 2]);
    }

    #[test]
    fn merge_costs_sum_to_total_sse() {
        // Ward costs add up to the one-cluster SSE
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0], [4.0, 2.0]]);
        let total: f64 = ward_merges(&x).iter().map(|m| m.cost).sum();
        let one = agglomerative(&x, 1).unwrap();
        assert!((total - one.sse).abs() < 1e-9);
    }

    /// Naive greedy Ward: recompute every pairwise merge cost each round.
    fn greedy_ward(x: &Matrix, k: usize) -> Vec<Vec<usize>> {
        let mut clusters: Vec<Vec<usize>> = (0..x.rows()).map(|i| vec![i]).collect();
        let sse_of = |c: &[usize]| {
            let d = x.cols();
            let mut mean = vec![0.0; d];
            for &i in c {
                for j in 0..d {
                    mean[j] += x.get(i, j) / c.len() as f64;
                }
            }
            c.iter().map(|&i| sq_dist(x.row(i), &mean)).sum::<f64>()
        };
        while clusters.len() > k {
            let mut best = (0, 1, f64::INFINITY);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut u = clusters[a].clone();
                    u.extend(&clusters[b]);
                    let cost = sse_of(&u) - sse_of(&clusters[a]) - sse_of(&clusters[b]);
                    if cost < best.2 - 1e-12 {
                        best = (a, b, cost);
                    }
                }
            }
            let b = clusters.remove(best.1);
            clusters[best.0].extend(b);
        }
        let mut out: Vec<Vec<usize>> = clusters
            .into_iter()
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn matches_greedy_ward() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let rows: Vec<[f64; 2]> = (0..12).map(|_| [rng.random(), rng.random()]).collect();
            let x = Matrix::from_rows(&rows);
            for k in 1..=5 {
                let m = agglomerative(&x, k).unwrap();
                let mut groups: Vec<Vec<usize>> = vec![vec![]; k];
                for (i, a) in m.assignments.iter().enumerate() {
                    groups[*a].push(i);
                }
                groups.sort();
                assert_eq!(groups, greedy_ward(&x, k));
            }
        }
    }
}

//! Lloyd iterations with a per-cluster capacity.

use rand::Rng;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_ROUNDS: usize = 100;

/// Result of [`capped_kmeans`].
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    /// One row per cluster.
    pub centers: Matrix,
    pub rounds: usize,
    /// SSE after each accepted round, starting with the first assignment.
    pub sse_history: Vec<f64>,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centers.rows()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn sse(&self) -> f64 {
        *self.sse_history.last().expect("at least one round")
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Within-cluster sum of squared distances to the given centers.
pub fn sse(points: &Matrix, labels: &[usize], centers: &Matrix) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), centers.row(l)))
        .sum()
}

fn kmeans_pp(points: &Matrix, k: usize, r: &mut rng::Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![r.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = r.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            // All remaining points coincide with a center.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[r.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut c = Matrix::zeros(k, points.cols());
    for (j, &i) in chosen.iter().enumerate() {
        c.row_mut(j).copy_from_slice(points.row(i));
    }
    c
}

/// Points in ascending order of distance to their nearest center each take
/// the nearest center that still has room.
pub fn capped_assign(points: &Matrix, centers: &Matrix, cap: usize) -> Vec<usize> {
    let n = points.rows();
    let k = centers.rows();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..k).map(|j| sq_dist(points.row(i), centers.row(j))).collect())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let nearest = |i: usize| dist[i].iter().copied().fold(f64::INFINITY, f64::min);
    order.sort_by(|&a, &b| nearest(a).total_cmp(&nearest(b)).then(a.cmp(&b)));
    let mut room = vec![cap; k];
    let mut labels = vec![0; n];
    for i in order {
        let best = (0..k)
            .filter(|&j| room[j] > 0)
            .min_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)))
            .expect("total capacity covers every point");
        room[best] -= 1;
        labels[i] = best;
    }
    labels
}

fn means(points: &Matrix, labels: &[usize], prev: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(prev.rows(), prev.cols());
    let mut counts = vec![0usize; prev.rows()];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (o, x) in c.row_mut(l).iter_mut().zip(points.row(i)) {
            *o += x;
        }
    }
    for (j, &n) in counts.iter().enumerate() {
        if n == 0 {
            c.row_mut(j).copy_from_slice(prev.row(j));
        } else {
            c.row_mut(j).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    c
}

/// `k` clusters of at most `cap` points each. A round recomputes centers and
/// then reassigns; a reassignment that would raise the SSE is rejected and
/// ends the iteration, so the SSE never increases.
pub fn capped_kmeans(points: &Matrix, k: usize, cap: usize, seed: u64) -> Result<Clustering> {
    let n = points.rows();
    if n == 0 || k == 0 || cap == 0 {
        return Err(Error::InvalidArgument("clustering needs points, clusters and capacity".into()));
    }
    if k > n || k.saturating_mul(cap) < n {
        return Err(Error::InvalidArgument(format!(
            "{k} clusters of capacity {cap} cannot hold {n} points"
        )));
    }
    let mut r = rng::rng(seed);
    let mut centers = kmeans_pp(points, k, &mut r);
    let mut labels = capped_assign(points, &centers, cap);
    let mut history = vec![sse(points, &labels, &centers)];
    let mut rounds = 0;
    while rounds < MAX_ROUNDS {
        rounds += 1;
        centers = means(points, &labels, &centers);
        let settled = sse(points, &labels, &centers);
        let next = capped_assign(points, &centers, cap);
        let moved = sse(points, &next, &centers);
        if next == labels || moved > settled {
            history.push(settled);
            break;
        }
        labels = next;
        history.push(moved);
    }
    Ok(Clustering {
        centers: means(points, &labels, &centers),
        labels,
        rounds,
        sse_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_assignment_respects_capacity() {
        let p = Matrix::from_rows(&[[0.0], [0.1], [0.2], [5.0]]);
        let c = Matrix::from_rows(&[[0.0], [5.0]]);
        let l = capped_assign(&p, &c, 2);
        assert_eq!(l, vec![0, 0, 1, 1]);
    }

    #[test]
    fn sse_never_increases() {
        for seed in 0..30u64 {
            let mut r = rng::rng(seed);
            let n = r.gen_range(5..60);
            let data = (0..n * 3).map(|_| r.gen_range(-3.0..3.0)).collect();
            let p = Matrix::from_vec(n, 3, data).unwrap();
            let cap = r.gen_range(2..8);
            let k = n.div_ceil(cap);
            let c = capped_kmeans(&p, k, cap, seed).unwrap();
            for w in c.sse_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", c.sse_history);
            }
            assert!(c.sizes().iter().all(|&s| (1..=cap).contains(&s)));
            assert!((c.sse() - sse(&p, &c.labels, &c.centers)).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_infeasible() {
        let p = Matrix::zeros(5, 1);
        assert!(capped_kmeans(&p, 2, 2, 0).is_err());
        assert!(capped_kmeans(&p, 6, 2, 0).is_err());
        assert!(capped_kmeans(&Matrix::zeros(0, 1), 1, 1, 0).is_err());
    }

    #[test]
    fn coincident_points() {
        let p = Matrix::zeros(6, 2);
        let c = capped_kmeans(&p, 3, 2, 1).unwrap();
        assert_eq!(c.sizes(), vec![2, 2, 2]);
        assert_eq!(c.sse(), 0.0);
    }
}

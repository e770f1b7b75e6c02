use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, squared_distance, Matrix};

pub const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared distances to assigned centroids after each Lloyd iteration.
    pub objective_history: Vec<f64>,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.rows()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.row_iter().enumerate() {
        let d = squared_distance(row, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(x: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = x.rows();
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = x
        .row_iter()
        .map(|r| squared_distance(r, x.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1))
        } else {
            rng.random_range(0..n)
        };
        centers.push(pick);
        for (d, r) in d2.iter_mut().zip(x.row_iter()) {
            *d = d.min(squared_distance(r, x.row(pick)));
        }
    }
    x.select_rows(&centers)
}

/// Lloyd's algorithm with k-means++ seeding. Runs until assignments stop changing or
/// [`MAX_ITER`] iterations. An empty cluster is reseeded to the point farthest from
/// its current centroid.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    if n < k {
        return Err(Error::config(format!(
            "k-means with k={k} needs at least {k} points, got {n}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..MAX_ITER {
        iterations = it + 1;
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for (i, row) in x.row_iter().enumerate() {
            let (c, d) = nearest(row, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dist[i] = d;
        }
        // reseed empty clusters
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                sizes[assignments[i]] -= 1;
                assignments[i] = c;
                sizes[c] = 1;
                dist[i] = 0.0;
                changed = true;
            }
        }
        // update step
        let mut sums = Matrix::zeros(k, x.cols());
        for (i, row) in x.row_iter().enumerate() {
            for (s, v) in sums.row_mut(assignments[i]).iter_mut().zip(row) {
                *s += v;
            }
        }
        for (c, &size) in sizes.iter().enumerate() {
            if size == 0 {
                continue;
            }
            let inv = 1.0 / size as f64;
            for (cen, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *cen = s * inv;
            }
        }
        let objective: f64 = x
            .row_iter()
            .zip(&assignments)
            .map(|(r, &a)| squared_distance(r, centroids.row(a)))
            .sum();
        history.push(objective);
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
        converged,
        objective_history: history,
    })
}

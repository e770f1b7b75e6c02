use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Squared Euclidean distance.
    pub distance: f64,
}

/// Exact brute-force k-NN of every query row among the pool rows.
///
/// Ties go to the lower pool index; `k` larger than the pool returns the whole pool.
pub fn knn_query(queries: &Matrix, pool: &Matrix, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if pool.rows() == 0 {
        return Err(Error::config("k-NN query against an empty pool"));
    }
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    if queries.cols() != pool.cols() {
        return Err(Error::config(format!(
            "query width {} differs from pool width {}",
            queries.cols(),
            pool.cols()
        )));
    }
    let k = k.min(pool.rows());
    Ok(queries
        .row_iter()
        .map(|q| {
            let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
            for (index, p) in pool.row_iter().enumerate() {
                let distance = squared_distance(q, p);
                if best.len() == k && distance >= best[k - 1].distance {
                    continue;
                }
                // strict comparison keeps earlier (lower) indices ahead on ties
                let pos = best.partition_point(|n| n.distance <= distance);
                best.insert(pos, Neighbor { index, distance });
                best.truncate(k);
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn self_match() {
        let nn = knn_query(
            &m(&[vec![0.0, 0.0]]),
            &m(&[vec![0.0, 0.0], vec![5.0, 5.0]]),
            1,
        )
        .unwrap();
        assert_eq!(
            nn[0],
            vec![Neighbor {
                index: 0,
                distance: 0.0
            }]
        );
    }

    #[test]
    fn two_nearest() {
        let nn = knn_query(&m(&[vec![0.0]]), &m(&[vec![1.0], vec![3.0], vec![-2.0]]), 2).unwrap();
        assert_eq!(
            nn[0],
            vec![
                Neighbor {
                    index: 0,
                    distance: 1.0
                },
                Neighbor {
                    index: 2,
                    distance: 4.0
                }
            ]
        );
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pool = m(&[vec![2.0], vec![-1.0], vec![1.0], vec![-2.0]]);
        let nn = knn_query(&m(&[vec![0.0]]), &pool, 3).unwrap();
        let idx: Vec<usize> = nn[0].iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 2, 0]);
    }

    #[test]
    fn k_beyond_pool_returns_everything() {
        let nn = knn_query(&m(&[vec![0.0]]), &m(&[vec![1.0], vec![3.0]]), 10).unwrap();
        assert_eq!(nn[0].len(), 2);
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(knn_query(&m(&[vec![0.0]]), &Matrix::zeros(0, 1), 1).is_err());
    }
}

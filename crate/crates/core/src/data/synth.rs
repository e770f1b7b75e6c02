use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    /// Per-feature standard deviation.
    pub scale: f64,
    /// Relative share of the normal samples.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Gaussian normal clusters plus anomalies drawn uniformly from a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub dim: usize,
    pub clusters: Vec<ClusterSpec>,
    pub normal_count: usize,
    pub anomaly_count: usize,
    pub box_low: f64,
    pub box_high: f64,
    pub seed: u64,
}

fn default_name() -> String {
    "synthetic".to_string()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("synthetic dim must be >= 1"));
        }
        if self.clusters.is_empty() {
            return Err(Error::config("synthetic spec needs at least one cluster"));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.mean.len() != self.dim {
                return Err(Error::config(format!(
                    "cluster {i} mean has {} entries, dim is {}",
                    c.mean.len(),
                    self.dim
                )));
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) || !(c.weight > 0.0 && c.weight.is_finite())
            {
                return Err(Error::config(format!(
                    "cluster {i} needs positive finite scale and weight"
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::config(format!("cluster {i} mean is not finite")));
            }
        }
        if !self.box_low.is_finite() || !self.box_high.is_finite() || self.box_low >= self.box_high
        {
            return Err(Error::config("anomaly box needs finite box_low < box_high"));
        }
        let total = self.normal_count + self.anomaly_count;
        let frac = if total == 0 {
            0.0
        } else {
            self.anomaly_count as f64 / total as f64
        };
        if !(frac > 0.0 && frac < 0.5) {
            return Err(Error::config(format!(
                "anomaly fraction must lie in (0, 0.5), got {frac}"
            )));
        }
        Ok(())
    }

    /// Normal sample count per cluster, split by weight with largest remainders.
    pub fn cluster_counts(&self) -> Vec<usize> {
        let wsum: f64 = self.clusters.iter().map(|c| c.weight).sum();
        let exact: Vec<f64> = self
            .clusters
            .iter()
            .map(|c| c.weight / wsum * self.normal_count as f64)
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let short = self.normal_count - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        counts
    }
}

/// Samples the dataset described by `spec`, rows shuffled.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let d = spec.dim;
    let mut rows: Vec<(Vec<f64>, u8)> = Vec::with_capacity(spec.normal_count + spec.anomaly_count);
    for (c, count) in spec.clusters.iter().zip(spec.cluster_counts()) {
        let noise = Normal::new(0.0, c.scale).map_err(|e| Error::config(e.to_string()))?;
        for _ in 0..count {
            let row = c.mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            rows.push((row, 0));
        }
    }
    for _ in 0..spec.anomaly_count {
        let row = (0..d)
            .map(|_| rng.random_range(spec.box_low..spec.box_high))
            .collect();
        rows.push((row, 1));
    }
    rows.shuffle(&mut rng);
    let y = rows.iter().map(|r| r.1).collect();
    let data = rows.into_iter().flat_map(|r| r.0).collect();
    let x = Matrix::from_vec(spec.normal_count + spec.anomaly_count, d, data)?;
    let mut ds = Dataset::new(spec.name.clone(), x, Some(y))?;
    ds.notes.push(format!("synthetic, seed {}", spec.seed));
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            name: "t".into(),
            dim: 3,
            clusters: vec![
                ClusterSpec {
                    mean: vec![0.0; 3],
                    scale: 0.1,
                    weight: 1.0,
                },
                ClusterSpec {
                    mean: vec![2.0; 3],
                    scale: 0.1,
                    weight: 1.0,
                },
            ],
            normal_count: 500,
            anomaly_count: 50,
            box_low: -1.0,
            box_high: 3.0,
            seed: 9,
        }
    }

    #[test]
    fn counts_and_labels() {
        let ds = gen_synthetic(&spec()).unwrap();
        assert_eq!(ds.len(), 550);
        assert_eq!(ds.anomaly_count(), Some(50));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = gen_synthetic(&spec()).unwrap().to_csv_string().unwrap();
        let b = gen_synthetic(&spec()).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_anomalies_rejected() {
        let s = SyntheticSpec {
            normal_count: 40,
            anomaly_count: 60,
            ..spec()
        };
        assert!(gen_synthetic(&s).is_err());
    }

    #[test]
    fn weighted_counts() {
        let mut s = spec();
        s.clusters[0].weight = 2.0;
        s.normal_count = 10;
        assert_eq!(s.cluster_counts(), vec![7, 3]);
    }
}

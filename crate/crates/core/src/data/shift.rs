use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{kmeans, Dataset};
use crate::error::{Error, Result};
use crate::numerics::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMeta {
    pub k_clusters: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub largest_cluster: usize,
    pub cluster_sizes: Vec<usize>,
    /// Cluster id of every sample; `None` for anomalies.
    pub clusters: Vec<Option<usize>>,
}

/// Train/test partition of one labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub meta: ShiftMeta,
}

impl ShiftSplit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Clusters the normal samples with K-Means; a `split_ratio` share of the largest cluster
/// (ties: lowest id) becomes the training set. Everything else, including every anomaly
/// and every normal from the other clusters, goes to the test set.
pub fn shift_split(
    ds: &Dataset,
    k_clusters: usize,
    split_ratio: f64,
    seed: u64,
) -> Result<ShiftSplit> {
    let y =
        ds.y.as_ref()
            .ok_or_else(|| Error::config("shift split needs labels"))?;
    if !(split_ratio > 0.0 && split_ratio <= 1.0) {
        return Err(Error::config(format!(
            "split ratio must lie in (0, 1], got {split_ratio}"
        )));
    }
    let normals: Vec<usize> = (0..ds.len()).filter(|&i| y[i] == 0).collect();
    if normals.len() < 2 {
        return Err(Error::config(
            "shift split needs at least two normal samples",
        ));
    }
    if k_clusters > normals.len() {
        return Err(Error::config(format!(
            "k_clusters={k_clusters} exceeds the {} normal samples",
            normals.len()
        )));
    }
    let km = kmeans(&ds.x.select_rows(&normals), k_clusters, seed)?;
    let sizes = km.cluster_sizes();
    let largest = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
        .unwrap_or(0);

    let mut clusters = vec![None; ds.len()];
    for (&i, &c) in normals.iter().zip(&km.assignments) {
        clusters[i] = Some(c);
    }
    let mut members: Vec<usize> = normals
        .iter()
        .zip(&km.assignments)
        .filter(|&(_, &c)| c == largest)
        .map(|(&i, _)| i)
        .collect();
    members.shuffle(&mut derived_rng(seed, 1));
    let n_train = ((members.len() as f64 * split_ratio).round() as usize).clamp(1, members.len());
    let mut train = members[..n_train].to_vec();
    train.sort_unstable();
    let mut in_train = vec![false; ds.len()];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..ds.len()).filter(|&i| !in_train[i]).collect();
    Ok(ShiftSplit {
        train,
        test,
        meta: ShiftMeta {
            k_clusters,
            split_ratio,
            seed,
            largest_cluster: largest,
            cluster_sizes: sizes,
            clusters,
        },
    })
}

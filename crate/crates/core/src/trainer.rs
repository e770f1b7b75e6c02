//! Dual-task mini-batch training and batch scoring.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{dynamic_lambda, per_sample_score, recon_losses, Objective};
use crate::model::{Calibration, ModelConfig, Parameters};
use crate::numerics::{derived_rng, LrSchedule, Matrix, OptimizerState};
use crate::ttcl::knn_query;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub main: f64,
    pub aux: f64,
    pub diversity: f64,
    pub lambda: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Mean per-sample score over the training set after the last epoch.
    pub final_mean_sample_loss: f64,
    pub calibration: Calibration,
    pub wall_time_secs: f64,
}

/// Trains a fresh model on `train` (already scaled). Deterministic under `seed`.
pub fn train(train: &Matrix, config: &ModelConfig, seed: u64) -> Result<(Parameters, TrainReport)> {
    let start = Instant::now();
    if train.rows() == 0 {
        return Err(Error::config("training set is empty"));
    }
    if config.input_dim != train.cols() {
        return Err(Error::config(format!(
            "config input_dim {} does not match {} training features",
            config.input_dim,
            train.cols()
        )));
    }
    if !train.is_finite() {
        return Err(Error::numeric(
            "training features contain non-finite values",
        ));
    }
    let mut params = Parameters::init(config, seed)?;
    let schedule = LrSchedule {
        initial: config.learning_rate,
        decay: config.lr_decay,
    };
    let mut opt = OptimizerState::new(config.learning_rate, config.weight_decay);
    let mut rng = derived_rng(seed, 0);
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let n = train.rows() as f64;

    for epoch in 0..config.epochs {
        opt.lr = schedule.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut acc = EpochStats {
            epoch,
            learning_rate: opt.lr,
            main: 0.0,
            aux: 0.0,
            diversity: 0.0,
            lambda: 0.0,
            total: 0.0,
        };
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let x = train.select_rows(idx);
            let cache = params.forward(&x)?;
            let recon = recon_losses(&cache, &x)?;
            let lambda = dynamic_lambda(recon.main, config.lambda);
            let obj = Objective::train(
                lambda,
                config.gamma,
                config.tau,
                config.diversity_mean_inner,
                config.diversity_scale,
            );
            let (value, grads) = obj.value_and_grad_from(&params, &cache, &x)?;
            if !value.total.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {bi}"
                )));
            }
            opt.step(params.param_slices_mut(), &grads.slices())
                .map_err(|e| Error::numeric(format!("epoch {epoch}, batch {bi}: {e}")))?;
            let w = idx.len() as f64 / n;
            let b = &value.breakdown;
            acc.main += w * b.main;
            acc.aux += w * b.aux;
            acc.diversity += w * b.diversity;
            acc.lambda += w * lambda;
            acc.total += w * value.total;
        }
        epochs.push(acc);
    }

    let calibration = calibrate(&params, train, config)?;
    Ok((
        params,
        TrainReport {
            epochs,
            final_mean_sample_loss: calibration.mean_train_loss,
            calibration,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Fixes the scoring λ and the abnormal-side margins from the trained model.
pub fn calibrate(params: &Parameters, train: &Matrix, config: &ModelConfig) -> Result<Calibration> {
    let main_losses = per_sample_main(params, train, config.batch_size)?;
    let main = main_losses.iter().sum::<f64>() / main_losses.len() as f64;
    let score_lambda = dynamic_lambda(main, config.lambda);
    let scores = score_matrix(params, train, score_lambda, config.batch_size)?;
    let mean_train_loss = scores.iter().sum::<f64>() / scores.len() as f64;

    let emb = params.clean_embedding(train)?;
    let contra_margin = config.margin_scale * mean_knn_distance(&emb, config.k_neighbors)?;
    Ok(Calibration {
        score_lambda,
        mean_train_loss,
        recon_margin: config.margin_scale * mean_train_loss,
        contra_margin,
    })
}

/// Mean over rows of the mean squared distance to the `k` nearest other rows.
fn mean_knn_distance(emb: &Matrix, k: usize) -> Result<f64> {
    if emb.rows() < 2 {
        return Ok(1.0);
    }
    let nn = knn_query(emb, emb, k + 1)?;
    let mut total = 0.0;
    for (i, list) in nn.iter().enumerate() {
        let others: Vec<f64> = match list.iter().position(|n| n.index == i) {
            Some(p) => list
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != p)
                .map(|(_, n)| n.distance)
                .collect(),
            None => list[..list.len() - 1].iter().map(|n| n.distance).collect(),
        };
        total += others.iter().sum::<f64>() / others.len().max(1) as f64;
    }
    let mean = total / emb.rows() as f64;
    Ok(if mean > 0.0 { mean } else { 1.0 })
}

fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(batch.max(1))
        .map(|s| (s, (s + batch).min(n)))
        .collect()
}

fn per_sample_main(params: &Parameters, x: &Matrix, batch: usize) -> Result<Vec<f64>> {
    let parts = batch_ranges(x.rows(), batch)
        .into_par_iter()
        .map(|(s, e)| {
            let xb = x.row_block(s, e);
            let cache = params.forward(&xb)?;
            Ok(recon_losses(&cache, &xb)?.per_sample_main)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// Per-sample anomaly scores in row order; no parameter is touched.
pub fn score_matrix(
    params: &Parameters,
    x: &Matrix,
    lambda: f64,
    batch: usize,
) -> Result<Vec<f64>> {
    if x.cols() != params.input_dim() {
        return Err(Error::config(format!(
            "data has {} features, model expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let parts = batch_ranges(x.rows(), batch)
        .into_par_iter()
        .map(|(s, e)| {
            let xb = x.row_block(s, e);
            let cache = params.forward(&xb)?;
            per_sample_score(&cache, &xb, lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// Scores a dataset with the λ fixed at calibration time.
pub fn score_dataset(
    params: &Parameters,
    x: &Matrix,
    calibration: &Calibration,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    score_matrix(params, x, calibration.score_lambda, config.batch_size)
}

//! Test-time contrastive learning.
//!
//! Each round re-scores the whole test set with the current model, fits confidence
//! thresholds to the min-max normalized scores, picks pseudo-normal and pseudo-abnormal
//! samples among those not used before, and takes a few epochs of updates: pseudo-normal
//! batches minimize reconstruction and pull their embeddings toward the k nearest pool
//! embeddings, pseudo-abnormal batches do the opposite under per-sample clamps. The
//! pseudo-normal rows then join the pool.

mod gmm;
mod knn;

pub use gmm::{
    estimate_selection_thresholds, fit_mixture, thresholds_from_mixture, Component, Mixture,
    SelectionThresholds, ThresholdMethod,
};
pub use knn::{knn_query, Neighbor};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Contrast, Objective, Side};
use crate::model::{Calibration, ModelConfig, Parameters};
use crate::numerics::{derived_rng, Matrix, OptimizerState};
use crate::trainer::score_matrix;

/// Raw scores and their min-max normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Min-max scales to [0, 1]; a constant vector maps to all zeros.
pub fn normalize_scores(raw: &[f64]) -> Result<ScoreVector> {
    if raw.is_empty() {
        return Err(Error::config("cannot normalize an empty score vector"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite anomaly score"));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let normalized = if span > 0.0 {
        raw.iter().map(|v| (v - min) / span).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(ScoreVector {
        raw: raw.to_vec(),
        normalized,
    })
}

/// High-confidence index sets of one round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoSets {
    pub normal: Vec<usize>,
    pub abnormal: Vec<usize>,
}

pub fn select_pseudo(
    scores: &ScoreVector,
    thresholds: &SelectionThresholds,
    used: &[bool],
) -> Result<PseudoSets> {
    if thresholds.low >= thresholds.high {
        return Err(Error::internal(format!(
            "threshold contract breached: low {} >= high {}",
            thresholds.low, thresholds.high
        )));
    }
    if used.len() != scores.normalized.len() {
        return Err(Error::internal("used-mask length differs from score count"));
    }
    let mut sets = PseudoSets::default();
    for (i, (&s, &u)) in scores.normalized.iter().zip(used).enumerate() {
        if u {
            continue;
        }
        if s <= thresholds.low {
            sets.normal.push(i);
        } else if s >= thresholds.high {
            sets.abnormal.push(i);
        }
    }
    Ok(sets)
}

/// Binary labels flagging the top `ceil(α·N)` scores; ties go to the lower index.
pub fn predict_labels(scores: &[f64], alpha: f64) -> Result<Vec<u8>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite score"));
    }
    let n = scores.len();
    let count = flag_count(alpha, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![0u8; n];
    for &i in &order[..count] {
        labels[i] = 1;
    }
    Ok(labels)
}

/// `ceil(α·N)`, robust to representation error in `α·N`.
pub fn flag_count(alpha: f64, n: usize) -> usize {
    let raw = alpha * n as f64;
    let rounded = raw.round();
    let c = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (c as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train,
    /// Promoted from the test set in the given round.
    Round(usize),
}

/// Feature rows of known-normal samples. Embeddings are recomputed from these rows with
/// the current encoder whenever they are needed.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalPool {
    rows: Matrix,
    provenance: Vec<Provenance>,
    test_index: Vec<Option<usize>>,
}

impl NormalPool {
    pub fn from_train(train: &Matrix) -> Self {
        Self {
            rows: train.clone(),
            provenance: vec![Provenance::Train; train.rows()],
            test_index: vec![None; train.rows()],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Test indices of promoted rows.
    pub fn promoted(&self) -> impl Iterator<Item = usize> + '_ {
        self.test_index.iter().filter_map(|&i| i)
    }

    fn promote(&mut self, test: &Matrix, idx: &[usize], round: usize) -> Result<()> {
        let added = test.select_rows(idx);
        self.rows = Matrix::vstack(&[&self.rows, &added])?;
        self.provenance
            .extend(std::iter::repeat_n(Provenance::Round(round), idx.len()));
        self.test_index.extend(idx.iter().map(|&i| Some(i)));
        Ok(())
    }
}

/// Everything adaptation needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtclOptions {
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub diversity_mean_inner: bool,
    pub diversity_scale: f64,
    pub delta: f64,
    pub k_neighbors: usize,
    pub recon_margin: f64,
    pub contra_margin: f64,
    pub gmm_confidence: f64,
    pub gmm_max_components: usize,
    pub max_rounds: usize,
    pub min_select: usize,
    pub adapt_epochs_per_round: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// When false (the "no-adapt" ablation) the pool is never grown and the contrastive
    /// anchors are the current round's pseudo-normals only.
    pub retain_pool: bool,
    pub seed: u64,
}

impl TtclOptions {
    pub fn from_config(cfg: &ModelConfig, cal: &Calibration, seed: u64) -> Self {
        Self {
            lambda: cal.score_lambda,
            gamma: cfg.gamma,
            tau: cfg.tau,
            diversity_mean_inner: cfg.diversity_mean_inner,
            diversity_scale: cfg.diversity_scale,
            delta: cfg.delta,
            k_neighbors: cfg.k_neighbors,
            recon_margin: cal.recon_margin,
            contra_margin: cal.contra_margin,
            gmm_confidence: cfg.gmm_confidence,
            gmm_max_components: cfg.gmm_max_components,
            max_rounds: cfg.max_rounds,
            min_select: cfg.min_select,
            adapt_epochs_per_round: cfg.adapt_epochs_per_round,
            batch_size: cfg.batch_size,
            learning_rate: cfg.adapt_learning_rate,
            weight_decay: cfg.weight_decay,
            retain_pool: true,
            seed,
        }
    }
}

/// Per-round record. True rates are filled only when evaluation labels are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub unused_before: usize,
    pub thresholds: Option<SelectionThresholds>,
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub pool_size_before: usize,
    pub pool_size_after: usize,
    pub stopped: bool,
    pub stop_reason: Option<String>,
    pub true_rate_normal: Option<f64>,
    pub true_rate_abnormal: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaptState {
    pub round: usize,
    pub params: Parameters,
    pub pool: NormalPool,
    pub used: Vec<bool>,
    pub optimizer: OptimizerState,
    pub history: Vec<RoundDiagnostics>,
    pub stopped: bool,
}

impl AdaptState {
    pub fn new(params: Parameters, train: &Matrix, test_len: usize, opts: &TtclOptions) -> Self {
        Self {
            round: 0,
            params,
            pool: NormalPool::from_train(train),
            used: vec![false; test_len],
            optimizer: OptimizerState::new(opts.learning_rate, opts.weight_decay),
            history: Vec::new(),
            stopped: false,
        }
    }
}

fn true_rate(idx: &[usize], labels: &[u8], positive: u8) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    Some(idx.iter().filter(|&&i| labels[i] == positive).count() as f64 / idx.len() as f64)
}

/// One adaptation round. Returns `true` when the run should stop.
///
/// `labels` feed the diagnostics only.
pub fn adapt_round(
    state: &mut AdaptState,
    test: &Matrix,
    opts: &TtclOptions,
    labels: Option<&[u8]>,
) -> Result<bool> {
    if state.round >= opts.max_rounds {
        return Err(Error::internal("adapt_round called past the round limit"));
    }
    if test.rows() != state.used.len() {
        return Err(Error::internal("test set size changed during adaptation"));
    }
    let round = state.round;
    let unused_before = state.used.iter().filter(|&&u| !u).count();
    let pool_size_before = state.pool.len();
    let mut diag = RoundDiagnostics {
        round,
        unused_before,
        thresholds: None,
        n_normal: 0,
        n_abnormal: 0,
        pool_size_before,
        pool_size_after: pool_size_before,
        stopped: false,
        stop_reason: None,
        true_rate_normal: None,
        true_rate_abnormal: None,
    };
    let stop = |state: &mut AdaptState, mut diag: RoundDiagnostics, reason: String| {
        diag.stopped = true;
        diag.stop_reason = Some(reason);
        state.history.push(diag);
        state.stopped = true;
        true
    };
    if unused_before < opts.min_select || test.rows() < gmm::MIN_SCORES {
        return Ok(stop(state, diag, "too few unused test samples".into()));
    }

    let raw = score_matrix(&state.params, test, opts.lambda, opts.batch_size)?;
    let scores = normalize_scores(&raw)?;
    let mut rng = derived_rng(opts.seed, 2 * round as u64 + 1);
    let thresholds = estimate_selection_thresholds(
        &scores.normalized,
        opts.gmm_confidence,
        opts.gmm_max_components,
        &mut rng,
    )?;
    diag.thresholds = Some(thresholds.clone());
    if thresholds.low >= thresholds.high {
        return Ok(stop(state, diag, "degenerate thresholds".into()));
    }
    let sets = select_pseudo(&scores, &thresholds, &state.used)?;
    diag.n_normal = sets.normal.len();
    diag.n_abnormal = sets.abnormal.len();
    if let Some(y) = labels {
        diag.true_rate_normal = true_rate(&sets.normal, y, 0);
        diag.true_rate_abnormal = true_rate(&sets.abnormal, y, 1);
    }
    if sets.normal.len() < opts.min_select && sets.abnormal.len() < opts.min_select {
        return Ok(stop(state, diag, "selection below min_select".into()));
    }

    let normal_rows = test.select_rows(&sets.normal);
    let mut shuffle_rng = derived_rng(opts.seed, 2 * round as u64 + 2);
    for _ in 0..opts.adapt_epochs_per_round {
        let anchors = if opts.retain_pool {
            state.pool.rows().clone()
        } else {
            normal_rows.clone()
        };
        let pool_emb = if anchors.rows() > 0 && opts.delta > 0.0 {
            Some(state.params.clean_embedding(&anchors)?)
        } else {
            None
        };
        let mut normal = sets.normal.clone();
        let mut abnormal = sets.abnormal.clone();
        normal.shuffle(&mut shuffle_rng);
        abnormal.shuffle(&mut shuffle_rng);
        let bs = opts.batch_size;
        let mut nb = normal.chunks(bs);
        let mut ab = abnormal.chunks(bs);
        loop {
            let batches = [(nb.next(), Side::Normal), (ab.next(), Side::Abnormal)];
            if batches.iter().all(|(b, _)| b.is_none()) {
                break;
            }
            for (batch, side) in batches {
                let Some(batch) = batch else { continue };
                let x = test.select_rows(batch);
                let contrast = pool_emb.as_ref().map(|pool| Contrast {
                    pool,
                    k: opts.k_neighbors,
                    delta: opts.delta,
                    margin: opts.contra_margin,
                });
                let obj = Objective {
                    side,
                    lambda: opts.lambda,
                    gamma: opts.gamma,
                    tau: opts.tau,
                    mean_inner: opts.diversity_mean_inner,
                    diversity_scale: opts.diversity_scale,
                    recon_margin: opts.recon_margin,
                    contrast,
                };
                let (value, grads) = obj.value_and_grad(&state.params, &x)?;
                if !value.total.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite update loss in round {round}"
                    )));
                }
                state
                    .optimizer
                    .step(state.params.param_slices_mut(), &grads.slices())?;
            }
        }
    }

    if opts.retain_pool {
        state.pool.promote(test, &sets.normal, round)?;
    }
    for &i in sets.normal.iter().chain(&sets.abnormal) {
        state.used[i] = true;
    }
    diag.pool_size_after = state.pool.len();
    state.history.push(diag);
    state.round += 1;
    Ok(false)
}

/// Runs rounds until the stop signal or `max_rounds`. The pool starts as all training rows.
pub fn run_ttcl(
    params: Parameters,
    train: &Matrix,
    test: &Matrix,
    opts: &TtclOptions,
    labels: Option<&[u8]>,
) -> Result<AdaptState> {
    if train.cols() != params.input_dim() || test.cols() != params.input_dim() {
        return Err(Error::config("train/test width does not match the model"));
    }
    if let Some(y) = labels {
        if y.len() != test.rows() {
            return Err(Error::config("label count differs from test rows"));
        }
    }
    let mut state = AdaptState::new(params, train, test.rows(), opts);
    while state.round < opts.max_rounds {
        if adapt_round(&mut state, test, opts, labels)? {
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(
            normalize_scores(&[2.0, 4.0, 6.0]).unwrap().normalized,
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(
            normalize_scores(&[5.0, 5.0, 5.0]).unwrap().normalized,
            vec![0.0; 3]
        );
        assert_eq!(
            normalize_scores(&[-1.0, 0.0, 3.0]).unwrap().normalized,
            vec![0.0, 0.25, 1.0]
        );
        assert!(normalize_scores(&[]).is_err());
    }

    fn thr(low: f64, high: f64) -> SelectionThresholds {
        SelectionThresholds {
            low,
            high,
            method: ThresholdMethod::Gmm,
            components: 2,
            means: None,
            warning: None,
        }
    }

    #[test]
    fn selection_examples() {
        let s = normalize_scores(&[0.0, 0.5, 1.0]).unwrap();
        let sets = select_pseudo(&s, &thr(0.1, 0.9), &[false; 3]).unwrap();
        assert_eq!(sets.normal, vec![0]);
        assert_eq!(sets.abnormal, vec![2]);

        let sets = select_pseudo(&s, &thr(0.1, 0.9), &[true, false, false]).unwrap();
        assert!(sets.normal.is_empty());

        let s = normalize_scores(&[0.0, 0.4, 0.5, 1.0]).unwrap();
        let sets = select_pseudo(&s, &thr(-1.0, 2.0), &[false; 4]).unwrap();
        assert_eq!(sets, PseudoSets::default());

        assert!(select_pseudo(&s, &thr(0.5, 0.5), &[false; 4]).is_err());
    }

    #[test]
    fn prediction_examples() {
        assert_eq!(
            predict_labels(&[0.1, 0.9, 0.5, 0.7], 0.25).unwrap(),
            vec![0, 1, 0, 0]
        );
        let l = predict_labels(&[0.1, 0.9, 0.5, 0.7], 0.5).unwrap();
        assert_eq!(l.iter().map(|&v| v as usize).sum::<usize>(), 2);
        assert_eq!(predict_labels(&[0.3; 5], 0.5).unwrap(), vec![1, 1, 1, 0, 0]);
        assert!(predict_labels(&[0.3; 5], 1.0).is_err());
        assert!(predict_labels(&[0.3; 5], 0.0).is_err());
    }

    #[test]
    fn flag_count_is_ceiling() {
        assert_eq!(flag_count(0.25, 4), 1);
        assert_eq!(flag_count(0.1, 30), 3);
        assert_eq!(flag_count(0.101, 30), 4);
        assert_eq!(flag_count(0.07, 100), 7);
    }

    #[test]
    fn pool_growth() {
        let train = Matrix::filled(3, 2, 0.0);
        let test = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let mut pool = NormalPool::from_train(&train);
        pool.promote(&test, &[0, 2], 0).unwrap();
        assert_eq!(pool.len(), 5);
        assert_eq!(pool.rows().row(4), &[3.0, 3.0]);
        assert_eq!(pool.promoted().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(pool.provenance()[3], Provenance::Round(0));
    }
}

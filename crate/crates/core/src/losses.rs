//! Training, scoring, and adaptation objectives.
//!
//! Reconstruction losses are per-element means: the main loss averages over the `B·d`
//! entries of each mask's reconstruction, the auxiliary loss over the `B·z` entries of
//! each predicted embedding, and both then average over the `T` masks. Per-sample
//! variants restrict the same means to one row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardCache, LambdaMode, ModelGrads, Parameters, Upstream};
use crate::numerics::{dot, Matrix};
use crate::ttcl::knn_query;

/// Which pseudo-label a batch carries; fixes the sign σ of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Normal,
    Abnormal,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Normal => 1.0,
            Side::Abnormal => -1.0,
        }
    }
}

fn check_masks(masks: &Matrix, num_masks: usize) -> Result<usize> {
    if num_masks == 0 || !masks.rows().is_multiple_of(num_masks) {
        return Err(Error::internal(format!(
            "{} mask rows cannot be split into {num_masks} masks",
            masks.rows()
        )));
    }
    if !masks.is_finite() {
        return Err(Error::numeric("non-finite mask values"));
    }
    Ok(masks.rows() / num_masks * masks.cols())
}

/// Pairwise mask similarities `⟨M_i, M_j⟩ / τ` over the full `B × d` block.
fn mask_similarities(masks: &Matrix, num_masks: usize, tau: f64) -> Result<Vec<Vec<f64>>> {
    let block = check_masks(masks, num_masks)?;
    let data = masks.as_slice();
    let mut sim = vec![vec![0.0; num_masks]; num_masks];
    for i in 0..num_masks {
        for j in i..num_masks {
            let v = dot(
                &data[i * block..(i + 1) * block],
                &data[j * block..(j + 1) * block],
            ) / tau;
            sim[i][j] = v;
            sim[j][i] = v;
        }
    }
    Ok(sim)
}

/// Softmax over `j ≠ i` of row `i`, plus its log-sum-exp.
fn off_diagonal_softmax(row: &[f64], i: usize) -> (f64, Vec<f64>) {
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (v - max).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    (max + sum.ln(), p)
}

/// Mask diversity loss `s · Σ_i ln Σ_{j≠i} exp(⟨M_i, M_j⟩ / τ)`; zero when `T = 1`.
///
/// `masks` is the stacked `(T·B) × d` mask tensor.
pub fn diversity_loss(masks: &Matrix, num_masks: usize, tau: f64, scale: f64) -> Result<f64> {
    Ok(diversity_with_grad(masks, num_masks, tau, scale)?.0)
}

/// Diversity loss and its gradient w.r.t. the stacked masks.
pub fn diversity_with_grad(
    masks: &Matrix,
    num_masks: usize,
    tau: f64,
    scale: f64,
) -> Result<(f64, Matrix)> {
    let block = check_masks(masks, num_masks)?;
    let mut grad = Matrix::zeros(masks.rows(), masks.cols());
    if num_masks == 1 {
        return Ok((0.0, grad));
    }
    let sim = mask_similarities(masks, num_masks, tau)?;
    let mut loss = 0.0;
    // coef[i][j] = dL/d⟨M_i, M_j⟩ summed over both orderings
    let mut coef = vec![vec![0.0; num_masks]; num_masks];
    for i in 0..num_masks {
        let (lse, p) = off_diagonal_softmax(&sim[i], i);
        loss += scale * lse;
        for j in 0..num_masks {
            if j != i {
                let c = scale * p[j] / tau;
                coef[i][j] += c;
                coef[j][i] += c;
            }
        }
    }
    let data = masks.as_slice();
    let g = grad.as_mut_slice();
    for i in 0..num_masks {
        let gi = &mut g[i * block..(i + 1) * block];
        for j in 0..num_masks {
            if j == i || coef[i][j] == 0.0 {
                continue;
            }
            let c = coef[i][j];
            for (o, &m) in gi.iter_mut().zip(&data[j * block..(j + 1) * block]) {
                *o += c * m;
            }
        }
    }
    Ok((loss, grad))
}

/// Main and auxiliary reconstruction losses, batch-level and per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconLosses {
    pub main: f64,
    pub aux: f64,
    pub per_sample_main: Vec<f64>,
    pub per_sample_aux: Vec<f64>,
}

pub fn recon_losses(cache: &ForwardCache, x: &Matrix) -> Result<ReconLosses> {
    let (t, b) = (cache.num_masks, cache.batch);
    if x.rows() != b || cache.reconstruction.shape() != (t * b, x.cols()) {
        return Err(Error::internal("forward cache does not match the batch"));
    }
    let d = x.cols() as f64;
    let z = cache.clean_embedding.cols() as f64;
    let mut per_sample_main = vec![0.0; b];
    let mut per_sample_aux = vec![0.0; b];
    for i in 0..t {
        for (r, (m, a)) in per_sample_main
            .iter_mut()
            .zip(per_sample_aux.iter_mut())
            .enumerate()
        {
            let row = i * b + r;
            let xr = x.row(r);
            *m += cache
                .reconstruction
                .row(row)
                .iter()
                .zip(xr)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / d;
            let er = cache.clean_embedding.row(r);
            *a += cache
                .predicted_embedding
                .row(row)
                .iter()
                .zip(er)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / z;
        }
    }
    let tf = t as f64;
    per_sample_main.iter_mut().for_each(|v| *v /= tf);
    per_sample_aux.iter_mut().for_each(|v| *v /= tf);
    let bf = b.max(1) as f64;
    Ok(ReconLosses {
        main: per_sample_main.iter().sum::<f64>() / bf,
        aux: per_sample_aux.iter().sum::<f64>() / bf,
        per_sample_main,
        per_sample_aux,
    })
}

/// λ for the auxiliary loss. Dynamic mode caps at 1, including the `L_m = 0` case.
pub fn dynamic_lambda(main_loss: f64, mode: LambdaMode) -> f64 {
    match mode {
        LambdaMode::Fixed(v) => v,
        LambdaMode::Dynamic => {
            if main_loss <= 0.0 {
                1.0
            } else {
                (1.0 / main_loss).min(1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub main: f64,
    pub aux: f64,
    pub diversity: f64,
    pub lambda: f64,
    pub total: f64,
    pub per_sample: Vec<f64>,
}

pub fn train_loss(recon: &ReconLosses, diversity: f64, lambda: f64, gamma: f64) -> LossBreakdown {
    LossBreakdown {
        main: recon.main,
        aux: recon.aux,
        diversity,
        lambda,
        total: recon.main + lambda * recon.aux + gamma * diversity,
        per_sample: combine(&recon.per_sample_main, &recon.per_sample_aux, lambda),
    }
}

fn combine(main: &[f64], aux: &[f64], lambda: f64) -> Vec<f64> {
    main.iter().zip(aux).map(|(m, a)| m + lambda * a).collect()
}

/// Per-sample anomaly score: main plus λ-weighted auxiliary reconstruction error.
pub fn per_sample_score(cache: &ForwardCache, x: &Matrix, lambda: f64) -> Result<Vec<f64>> {
    let r = recon_losses(cache, x)?;
    Ok(combine(&r.per_sample_main, &r.per_sample_aux, lambda))
}

pub fn update_loss(adapt: f64, contra: f64, delta: f64) -> f64 {
    adapt + delta * contra
}

/// KNN contrastive term on embeddings `h` against fixed pool embeddings.
///
/// Each sample's distance is the mean squared Euclidean distance to its `k` nearest pool
/// members (fewer when the pool is smaller). The normal side minimizes the batch mean; the
/// abnormal side maximizes it with each sample clamped at `margin`. Returns the value and
/// `dL/dh`.
pub fn contra_loss(
    h: &Matrix,
    side: Side,
    pool: &Matrix,
    k: usize,
    margin: f64,
) -> Result<(f64, Matrix)> {
    if h.rows() == 0 {
        return Err(Error::config("contrastive loss needs a nonempty batch"));
    }
    if pool.cols() != h.cols() {
        return Err(Error::config("pool embeddings have the wrong width"));
    }
    let neighbors = knn_query(h, pool, k)?;
    let bf = h.rows() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(h.rows(), h.cols());
    for (r, nn) in neighbors.iter().enumerate() {
        let kf = nn.len() as f64;
        let dist = nn.iter().map(|n| n.distance).sum::<f64>() / kf;
        let weight = match side {
            Side::Normal => {
                value += dist / bf;
                1.0 / bf
            }
            Side::Abnormal => {
                value -= dist.min(margin) / bf;
                if dist < margin {
                    -1.0 / bf
                } else {
                    0.0
                }
            }
        };
        if weight == 0.0 {
            continue;
        }
        let hr = h.row(r);
        let gr = grad.row_mut(r);
        for n in nn {
            for ((g, &hv), &pv) in gr.iter_mut().zip(hr).zip(pool.row(n.index)) {
                *g += weight * 2.0 * (hv - pv) / kf;
            }
        }
    }
    Ok((value, grad))
}

/// Contrastive part of an [`Objective`].
#[derive(Debug, Clone, Copy)]
pub struct Contrast<'a> {
    /// Pool embeddings, treated as constants.
    pub pool: &'a Matrix,
    pub k: usize,
    pub delta: f64,
    pub margin: f64,
}

/// A full objective over one batch: the σ-signed adaptation loss plus an optional
/// δ-weighted contrastive term. `Side::Normal` without contrast is the training loss.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub side: Side,
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    /// See [`crate::model::ModelConfig::diversity_mean_inner`].
    pub mean_inner: bool,
    pub diversity_scale: f64,
    /// Per-sample clamp for the abnormal side; ignored on the normal side.
    pub recon_margin: f64,
    pub contrast: Option<Contrast<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub breakdown: LossBreakdown,
    pub adapt: f64,
    pub contra: f64,
    pub total: f64,
}

impl Objective<'_> {
    /// Training objective `L_m + λ·L_a + γ·L_div`.
    pub fn train(
        lambda: f64,
        gamma: f64,
        tau: f64,
        mean_inner: bool,
        diversity_scale: f64,
    ) -> Objective<'static> {
        Objective {
            side: Side::Normal,
            lambda,
            gamma,
            tau,
            mean_inner,
            diversity_scale,
            recon_margin: f64::INFINITY,
            contrast: None,
        }
    }

    /// Value only.
    pub fn value(&self, params: &Parameters, x: &Matrix) -> Result<ObjectiveValue> {
        let cache = params.forward(x)?;
        Ok(self.evaluate(&cache, x)?.0)
    }

    /// Value and gradients w.r.t. every parameter.
    pub fn value_and_grad(
        &self,
        params: &Parameters,
        x: &Matrix,
    ) -> Result<(ObjectiveValue, ModelGrads)> {
        let cache = params.forward(x)?;
        self.value_and_grad_from(params, &cache, x)
    }

    pub fn value_and_grad_from(
        &self,
        params: &Parameters,
        cache: &ForwardCache,
        x: &Matrix,
    ) -> Result<(ObjectiveValue, ModelGrads)> {
        let (value, up) = self.evaluate(cache, x)?;
        let grads = params.backward(cache, x, &up)?;
        Ok((value, grads))
    }

    fn evaluate(&self, cache: &ForwardCache, x: &Matrix) -> Result<(ObjectiveValue, Upstream)> {
        let b = x.rows();
        if b == 0 {
            return Err(Error::config("objective needs a nonempty batch"));
        }
        let recon = recon_losses(cache, x)?;
        let tau = if self.mean_inner {
            self.tau * (b * x.cols()) as f64
        } else {
            self.tau
        };
        let (div, div_grad) =
            diversity_with_grad(&cache.masks, cache.num_masks, tau, self.diversity_scale)?;
        let breakdown = train_loss(&recon, div, self.lambda, self.gamma);
        let bf = b as f64;

        let weights: Vec<f64> = match self.side {
            Side::Normal => vec![1.0 / bf; b],
            Side::Abnormal => breakdown
                .per_sample
                .iter()
                .map(|&l| {
                    if l < self.recon_margin {
                        -1.0 / bf
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        let recon_term: f64 = match self.side {
            Side::Normal => breakdown.per_sample.iter().sum::<f64>() / bf,
            Side::Abnormal => {
                -breakdown
                    .per_sample
                    .iter()
                    .map(|&l| l.min(self.recon_margin))
                    .sum::<f64>()
                    / bf
            }
        };
        let adapt = recon_term + self.gamma * div;

        let t = cache.num_masks;
        let d = x.cols() as f64;
        let z = cache.clean_embedding.cols() as f64;
        let tf = t as f64;
        let mut d_recon = Matrix::zeros(t * b, x.cols());
        let mut d_pred = Matrix::zeros(t * b, cache.clean_embedding.cols());
        let mut d_clean = Matrix::zeros(b, cache.clean_embedding.cols());
        for i in 0..t {
            for (r, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let row = i * b + r;
                let cm = 2.0 * w / (tf * d);
                for ((g, &p), &q) in d_recon
                    .row_mut(row)
                    .iter_mut()
                    .zip(cache.reconstruction.row(row))
                    .zip(x.row(r))
                {
                    *g = cm * (p - q);
                }
                let ca = 2.0 * w * self.lambda / (tf * z);
                if ca == 0.0 {
                    continue;
                }
                let e = cache.clean_embedding.row(r);
                let pred = cache.predicted_embedding.row(row);
                let dc = d_clean.row_mut(r);
                for (((g, c), &p), &q) in d_pred
                    .row_mut(row)
                    .iter_mut()
                    .zip(dc.iter_mut())
                    .zip(pred)
                    .zip(e)
                {
                    let v = ca * (p - q);
                    *g = v;
                    *c -= v;
                }
            }
        }
        let mut d_masks = div_grad;
        d_masks.scale(self.gamma);

        let mut contra = 0.0;
        let mut total = adapt;
        if let Some(c) = &self.contrast {
            let (v, dh) = contra_loss(&cache.clean_embedding, self.side, c.pool, c.k, c.margin)?;
            contra = v;
            total = update_loss(adapt, v, c.delta);
            if c.delta != 0.0 {
                for (g, h) in d_clean.as_mut_slice().iter_mut().zip(dh.as_slice()) {
                    *g += c.delta * h;
                }
            }
        }
        Ok((
            ObjectiveValue {
                breakdown,
                adapt,
                contra,
                total,
            },
            Upstream {
                reconstruction: d_recon,
                predicted_embedding: d_pred,
                masks: Some(d_masks),
                clean_embedding: d_clean,
            },
        ))
    }
}

/// Risk-aware adaptation loss on one pseudo-labeled batch, with gradients.
#[allow(clippy::too_many_arguments)]
pub fn adapt_loss(
    params: &Parameters,
    batch: &Matrix,
    side: Side,
    lambda: f64,
    gamma: f64,
    tau: f64,
    mean_inner: bool,
    diversity_scale: f64,
    margin: f64,
) -> Result<(f64, ModelGrads)> {
    let obj = Objective {
        side,
        lambda,
        gamma,
        tau,
        mean_inner,
        diversity_scale,
        recon_margin: margin,
        contrast: None,
    };
    let (v, g) = obj.value_and_grad(params, batch)?;
    Ok((v.total, g))
}

//! Confidence thresholds from a 1-D Gaussian mixture fitted to scores.
//!
//! Mixtures with 2 up to `max_components` components are fitted by EM and the one with the
//! lowest BIC is kept. The highest-mean component is the abnormal class and every other
//! component is normal, so a shifted but normal score mode need not be lumped together
//! with the anomalies.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SCORES: usize = 20;
pub const MAX_ITER: usize = 200;
pub const TOL: f64 = 1e-8;
/// Minimum separation of component means before the fit counts as degenerate.
pub const MIN_SEPARATION: f64 = 0.05;
pub const FALLBACK_LOW_QUANTILE: f64 = 0.20;
pub const FALLBACK_HIGH_QUANTILE: f64 = 0.05;
/// EM restarts per component count; the best log-likelihood wins.
pub const RESTARTS: usize = 3;
/// Fits with more than two components are discarded when a component holds fewer points.
pub const MIN_COMPONENT_COUNT: f64 = 5.0;
const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.weight.ln()
            - 0.5 * (2.0 * std::f64::consts::PI * self.variance).ln()
            - d * d / (2.0 * self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<Component>,
    pub iterations: usize,
    pub converged: bool,
    pub mean_log_likelihood: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

impl Mixture {
    /// Posterior probability of each component at `x`.
    pub fn posterior(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = self.components.iter().map(|c| c.log_density(x)).collect();
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Index of the highest-mean ("abnormal") component; ties go to the lower index.
    pub fn abnormal_index(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.components.iter().enumerate() {
            if c.mean > self.components[best].mean {
                best = i;
            }
        }
        best
    }

    /// Index of the highest-mean component among the normal ones.
    pub fn nearest_normal_index(&self) -> usize {
        let a = self.abnormal_index();
        let mut best: Option<usize> = None;
        for (i, c) in self.components.iter().enumerate() {
            if i != a && best.is_none_or(|b| c.mean > self.components[b].mean) {
                best = Some(i);
            }
        }
        best.unwrap_or(a)
    }

    pub fn abnormal_posterior(&self, x: f64) -> f64 {
        self.posterior(x)[self.abnormal_index()]
    }

    /// Bayesian information criterion for `n` scores; lower is better.
    pub fn bic(&self, n: usize) -> f64 {
        let params = (3 * self.components.len() - 1) as f64;
        -2.0 * self.mean_log_likelihood * n as f64 + params * (n as f64).ln()
    }

    /// Same mixture with the component order reversed.
    pub fn relabeled(&self) -> Self {
        let mut m = self.clone();
        m.components.reverse();
        m
    }
}

/// k-means++ seeds on the scores.
fn seed_centers<R: Rng + ?Sized>(scores: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let n = scores.len();
    let mut centers = vec![scores[rng.random_range(0..n)]];
    while centers.len() < k {
        let d2: Vec<f64> = scores
            .iter()
            .map(|&s| {
                centers
                    .iter()
                    .map(|c| (s - c) * (s - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            centers.push(centers[0]);
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        centers.push(scores[pick]);
    }
    centers
}

/// `resp[i][c]` is the responsibility of component `c` for score `i`.
fn m_step(scores: &[f64], resp: &[Vec<f64>], k: usize) -> Vec<Component> {
    let n = scores.len() as f64;
    let data_mean = scores.iter().sum::<f64>() / n;
    (0..k)
        .map(|c| {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= 1e-12 {
                // empty component: park it on the data mean with a wide variance
                return Component {
                    weight: 1e-12,
                    mean: data_mean,
                    variance: 1.0,
                };
            }
            let mean = resp.iter().zip(scores).map(|(r, s)| r[c] * s).sum::<f64>() / nk;
            let var = resp
                .iter()
                .zip(scores)
                .map(|(r, s)| r[c] * (s - mean) * (s - mean))
                .sum::<f64>()
                / nk;
            Component {
                weight: nk / n,
                mean,
                variance: var.max(VAR_FLOOR),
            }
        })
        .collect()
}

fn em<R: Rng + ?Sized>(scores: &[f64], k: usize, rng: &mut R) -> Mixture {
    let centers = seed_centers(scores, k, rng);
    let mut resp: Vec<Vec<f64>> = scores
        .iter()
        .map(|&s| {
            let mut best = 0;
            for (c, &m) in centers.iter().enumerate() {
                if (s - m).abs() < (s - centers[best]).abs() {
                    best = c;
                }
            }
            let mut r = vec![0.0; k];
            r[best] = 1.0;
            r
        })
        .collect();
    let mut comps = m_step(scores, &resp, k);
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = prev_ll;
    let mut converged = false;
    let mut iterations = 0;
    let mut logs = vec![0.0; k];
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let mut total = 0.0;
        for (r, &s) in resp.iter_mut().zip(scores) {
            for (l, c) in logs.iter_mut().zip(&comps) {
                *l = c.log_density(s);
            }
            let lse = log_sum_exp(&logs);
            total += lse;
            for (ri, l) in r.iter_mut().zip(&logs) {
                *ri = (l - lse).exp();
            }
        }
        ll = total / scores.len() as f64;
        if (ll - prev_ll).abs() < TOL {
            converged = true;
            break;
        }
        prev_ll = ll;
        comps = m_step(scores, &resp, k);
    }
    Mixture {
        components: comps,
        iterations,
        converged,
        mean_log_likelihood: ll,
    }
}

/// EM fit of a `k`-component mixture, best of [`RESTARTS`] k-means++ initializations.
pub fn fit_mixture<R: Rng + ?Sized>(scores: &[f64], k: usize, rng: &mut R) -> Result<Mixture> {
    if k < 2 {
        return Err(Error::config("mixture needs at least two components"));
    }
    if scores.len() < k {
        return Err(Error::config(format!(
            "mixture fit needs at least {k} scores"
        )));
    }
    let mut best: Option<Mixture> = None;
    for _ in 0..RESTARTS {
        let m = em(scores, k, rng);
        let better = match &best {
            None => true,
            Some(b) => {
                (m.converged && !b.converged)
                    || (m.converged == b.converged && m.mean_log_likelihood > b.mean_log_likelihood)
            }
        };
        if better {
            best = Some(m);
        }
    }
    best.ok_or_else(|| Error::internal("no mixture fitted"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Gmm,
    QuantileFallback,
}

/// Selection cutoffs on normalized scores. `low` below every score (or `high` above
/// every score) means nothing qualifies on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub low: f64,
    pub high: f64,
    pub method: ThresholdMethod,
    /// Number of mixture components of the selected fit.
    pub components: usize,
    /// Means of the nearest normal and of the abnormal component, when a mixture was fitted.
    pub means: Option<[f64; 2]>,
    pub warning: Option<String>,
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn quantile_thresholds(
    scores: &[f64],
    components: usize,
    means: Option<[f64; 2]>,
    warning: String,
) -> SelectionThresholds {
    let s = sorted(scores);
    let n = s.len();
    let lo_count = ((FALLBACK_LOW_QUANTILE * n as f64).ceil() as usize).clamp(1, n);
    let hi_count = ((FALLBACK_HIGH_QUANTILE * n as f64).ceil() as usize).clamp(1, n);
    warn!("{warning}; using quantile thresholds");
    SelectionThresholds {
        low: s[lo_count - 1],
        high: s[n - hi_count],
        method: ThresholdMethod::QuantileFallback,
        components,
        means,
        warning: Some(warning),
    }
}

/// Reads (t_low, t_high) off a fitted mixture: the largest score whose normal posterior
/// reaches `confidence`, and the smallest score whose abnormal posterior does.
pub fn thresholds_from_mixture(
    mix: &Mixture,
    scores: &[f64],
    confidence: f64,
) -> SelectionThresholds {
    let k = mix.components.len();
    let mu_n = mix.components[mix.nearest_normal_index()].mean;
    let mu_a = mix.components[mix.abnormal_index()].mean;
    let means = Some([mu_n, mu_a]);
    if (mu_a - mu_n).abs() < MIN_SEPARATION {
        return quantile_thresholds(
            scores,
            k,
            means,
            format!("degenerate mixture (means {mu_n:.4} and {mu_a:.4})"),
        );
    }
    let lo_sentinel = scores.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi_sentinel = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let mut low = lo_sentinel;
    let mut high = hi_sentinel;
    for &s in scores {
        let p_abn = mix.abnormal_posterior(s);
        if s <= mu_a && 1.0 - p_abn >= confidence && s > low {
            low = s;
        }
        if s >= mu_n && p_abn >= confidence && s < high {
            high = s;
        }
    }
    if low >= high {
        return quantile_thresholds(scores, k, means, "mixture thresholds overlap".to_string());
    }
    SelectionThresholds {
        low,
        high,
        method: ThresholdMethod::Gmm,
        components: k,
        means,
        warning: None,
    }
}

fn admissible(m: &Mixture, n: usize) -> bool {
    m.components.len() == 2
        || m.components
            .iter()
            .all(|c| c.weight * n as f64 >= MIN_COMPONENT_COUNT)
}

/// Fits mixtures with 2..=`max_components` components, keeps the lowest-BIC converged
/// admissible fit and derives thresholds from it. Falls back to quantiles when no fit
/// converges or the kept fit is degenerate.
pub fn estimate_selection_thresholds<R: Rng + ?Sized>(
    scores: &[f64],
    confidence: f64,
    max_components: usize,
    rng: &mut R,
) -> Result<SelectionThresholds> {
    if scores.len() < MIN_SCORES {
        return Err(Error::config(format!(
            "threshold estimation needs at least {MIN_SCORES} scores, got {}",
            scores.len()
        )));
    }
    if !(confidence > 0.5 && confidence < 1.0) {
        return Err(Error::config(format!(
            "confidence must lie in (0.5, 1), got {confidence}"
        )));
    }
    if max_components < 2 {
        return Err(Error::config("max_components must be >= 2"));
    }
    let n = scores.len();
    let mut best: Option<Mixture> = None;
    let mut first: Option<Mixture> = None;
    for k in 2..=max_components {
        let m = fit_mixture(scores, k, rng)?;
        if first.is_none() {
            first = Some(m.clone());
        }
        if !m.converged || !admissible(&m, n) {
            continue;
        }
        if best.as_ref().is_none_or(|b| m.bic(n) < b.bic(n)) {
            best = Some(m);
        }
    }
    match best {
        Some(m) => Ok(thresholds_from_mixture(&m, scores, confidence)),
        None => {
            let m = first.ok_or_else(|| Error::internal("no mixture fitted"))?;
            let means = Some([
                m.components[m.nearest_normal_index()].mean,
                m.components[m.abnormal_index()].mean,
            ]);
            Ok(quantile_thresholds(
                scores,
                m.components.len(),
                means,
                format!("EM did not converge in {MAX_ITER} iterations"),
            ))
        }
    }
}

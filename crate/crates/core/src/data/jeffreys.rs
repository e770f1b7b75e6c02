use crate::error::{Error, Result};
use crate::numerics::Matrix;

const SMOOTHING: f64 = 1e-10;

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let span = hi - lo;
    let mut n = 0.0;
    for v in values {
        let b = if span > 0.0 {
            (((v - lo) / span) * bins as f64).floor() as usize
        } else {
            0
        };
        h[b.min(bins - 1)] += 1.0;
        n += 1.0;
    }
    let smoothed: Vec<f64> = h.iter().map(|c| c / n + SMOOTHING).collect();
    let total: f64 = smoothed.iter().sum();
    smoothed.into_iter().map(|p| p / total).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Mean over features of `KL(p‖q) + KL(q‖p)` between normalized, ε-smoothed histograms
/// over the combined range.
pub fn jeffreys_divergence(a: &Matrix, b: &Matrix, bins: usize) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::config("Jeffreys divergence needs nonempty samples"));
    }
    if a.cols() != b.cols() {
        return Err(Error::config("samples differ in feature count"));
    }
    if bins < 2 {
        return Err(Error::config("need at least two histogram bins"));
    }
    let d = a.cols();
    let mut total = 0.0;
    for f in 0..d {
        let col = |m: &Matrix| (0..m.rows()).map(move |r| m.get(r, f)).collect::<Vec<_>>();
        let (ca, cb) = (col(a), col(b));
        let lo = ca.iter().chain(&cb).copied().fold(f64::INFINITY, f64::min);
        let hi = ca
            .iter()
            .chain(&cb)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let p = histogram(ca.into_iter(), lo, hi, bins);
        let q = histogram(cb.into_iter(), lo, hi, bins);
        total += kl(&p, &q) + kl(&q, &p);
    }
    Ok(total / d as f64)
}

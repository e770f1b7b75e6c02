//! Seeded inputs shared by the criterion benchmarks in `benches/`.

use rand::Rng;
use rttad::model::{ModelConfig, Parameters};
use rttad::numerics::seeded_rng;
use rttad::Matrix;

/// `rows × cols` matrix of uniform [0, 1) values.
pub fn uniform(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random::<f64>()).collect(),
    )
    .expect("shape")
}

/// Default-architecture model for `d` features.
pub fn model(d: usize, seed: u64) -> (ModelConfig, Parameters) {
    let cfg = ModelConfig::default().with_input_dim(d);
    let params = Parameters::init(&cfg, seed).expect("valid default config");
    (cfg, params)
}

/// Scores with roughly `positives` anomalies ranked high, and their labels.
pub fn scored_labels(n: usize, positives: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = seeded_rng(seed);
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i < positives)).collect();
    let scores = labels
        .iter()
        .map(|&y| rng.random::<f64>() + 0.5 * f64::from(y))
        .collect();
    (scores, labels)
}

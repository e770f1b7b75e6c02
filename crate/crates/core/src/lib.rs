//! Risk-aware test-time adaptation for unsupervised tabular anomaly detection.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense layers with hand-written reverse-mode gradients, Adam, LR schedule.
//! - [`model`]: the masked autoencoder (mask generators, shared encoder, decoder, auxiliary head).
//! - [`losses`]: diversity, reconstruction, adaptation, and KNN contrastive objectives.
//! - [`trainer`]: dual-task mini-batch training and batch scoring.
//! - [`ttcl`]: test-time contrastive learning (score normalization, GMM thresholds,
//!   pseudo-label selection, pool growth, prediction).
//! - [`data`]: CSV ingestion, scaling, K-Means, normality-shift splits, Jeffreys divergence,
//!   synthetic benchmarks.
//! - [`metrics`]: AUC-ROC, average precision, F1 at contamination, cross-dataset aggregation.
//! - [`experiment`]: end-to-end orchestration used by the CLI.

pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;
pub mod ttcl;

pub use data::{Dataset, Scaler, ShiftSplit, SyntheticSpec};
pub use error::{Error, Result};
pub use experiment::{Ablation, ExperimentConfig};
pub use metrics::MetricsReport;
pub use model::{Checkpoint, ForwardCache, LambdaMode, ModelConfig, Parameters};
pub use numerics::Matrix;
pub use trainer::TrainReport;
pub use ttcl::{AdaptState, NormalPool, PseudoSets, ScoreVector};

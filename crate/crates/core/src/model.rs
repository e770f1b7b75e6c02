//! The masked-autoencoder backbone.
//!
//! `T` mask generators map each input row to a mask in (0,1). Every masked copy of the
//! batch goes through the shared encoder; the decoder reconstructs the input from the
//! masked embedding (main task) and the auxiliary head predicts the clean embedding of
//! the unmasked input (auxiliary task).
//!
//! Per-mask tensors are stored stacked: a `(T·B) × w` matrix whose row block
//! `i·B..(i+1)·B` belongs to mask `i`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::numerics::{
    self, accumulate_grads, grad_slices, Activation, LayerGrad, Matrix, Mlp, Tape,
};

/// How the auxiliary-loss weight λ is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// `min(1, 1 / L_m)` recomputed from the main loss of each batch.
    Dynamic,
    Fixed(f64),
}

impl Serialize for LambdaMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaMode::Dynamic => s.serialize_str("dynamic"),
            LambdaMode::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(LambdaMode::Fixed(v)),
            Raw::Int(v) => Ok(LambdaMode::Fixed(v as f64)),
            Raw::Str(s) if s == "dynamic" => Ok(LambdaMode::Dynamic),
            Raw::Str(s) => s
                .parse::<f64>()
                .map(LambdaMode::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("invalid lambda {s:?}"))),
        }
    }
}

/// Every hyperparameter of training and adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input feature count `d`. Zero means "take it from the data".
    pub input_dim: usize,
    /// Number of masks `T`.
    pub num_masks: usize,
    /// Nominal embedding width `z`; shrinks when `d < z`.
    pub embed_dim: usize,
    pub mask_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub aux_hidden: Vec<usize>,
    /// Diversity temperature τ.
    pub tau: f64,
    /// Average the mask inner product over the `B·d` block instead of summing it, so the
    /// diversity term does not grow with the batch size.
    pub diversity_mean_inner: bool,
    /// Diversity scale s.
    pub diversity_scale: f64,
    /// Diversity weight γ.
    pub gamma: f64,
    pub lambda: LambdaMode,
    /// Contrastive weight δ.
    pub delta: f64,
    pub k_neighbors: usize,
    /// Abnormal-side clamp = `margin_scale` × mean training loss.
    pub margin_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub gmm_confidence: f64,
    /// Largest mixture size tried when fitting selection thresholds; 2 disables model selection.
    pub gmm_max_components: usize,
    pub max_rounds: usize,
    pub min_select: usize,
    pub adapt_epochs_per_round: usize,
    /// Learning rate used during test-time adaptation.
    pub adapt_learning_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            num_masks: 10,
            embed_dim: 128,
            mask_hidden: Vec::new(),
            encoder_hidden: vec![256],
            aux_hidden: vec![128],
            tau: 1.0,
            diversity_mean_inner: true,
            diversity_scale: 0.01,
            gamma: 0.1,
            lambda: LambdaMode::Dynamic,
            delta: 1.0,
            k_neighbors: 3,
            margin_scale: 4.0,
            epochs: 200,
            batch_size: 512,
            weight_decay: 1e-5,
            learning_rate: 1e-3,
            lr_decay: 0.98,
            gmm_confidence: 0.95,
            gmm_max_components: 3,
            max_rounds: 10,
            min_select: 5,
            adapt_epochs_per_round: 10,
            adapt_learning_rate: 1e-3,
        }
    }
}

impl ModelConfig {
    pub fn with_input_dim(mut self, d: usize) -> Self {
        self.input_dim = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be > 0, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be >= 0, got {v}")))
            }
        };
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be >= 1"));
        }
        if self.num_masks == 0 {
            return Err(Error::config("num_masks (T) must be >= 1"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be >= 1"));
        }
        if self.k_neighbors == 0 {
            return Err(Error::config("k_neighbors must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.min_select == 0 {
            return Err(Error::config("min_select must be >= 1"));
        }
        if self.gmm_max_components < 2 {
            return Err(Error::config("gmm_max_components must be >= 2"));
        }
        if self.adapt_epochs_per_round == 0 {
            return Err(Error::config("adapt_epochs_per_round must be >= 1"));
        }
        if self
            .mask_hidden
            .iter()
            .chain(&self.encoder_hidden)
            .chain(&self.aux_hidden)
            .any(|&w| w == 0)
        {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        positive("tau", self.tau)?;
        positive("diversity_scale", self.diversity_scale)?;
        nonneg("gamma", self.gamma)?;
        nonneg("delta", self.delta)?;
        positive("margin_scale", self.margin_scale)?;
        nonneg("weight_decay", self.weight_decay)?;
        positive("learning_rate", self.learning_rate)?;
        positive("adapt_learning_rate", self.adapt_learning_rate)?;
        positive("lr_decay", self.lr_decay)?;
        if let LambdaMode::Fixed(v) = self.lambda {
            nonneg("lambda", v)?;
        }
        if !(self.gmm_confidence > 0.5 && self.gmm_confidence < 1.0) {
            return Err(Error::config(format!(
                "gmm_confidence must lie in (0.5, 1), got {}",
                self.gmm_confidence
            )));
        }
        Ok(())
    }

    fn shrink(&self, w: usize) -> usize {
        let d = self.input_dim;
        if d < self.embed_dim {
            let scaled = (w as f64 * d as f64 / self.embed_dim as f64).round() as usize;
            scaled.max(d)
        } else {
            w
        }
    }

    /// Embedding width actually used.
    pub fn effective_embed_dim(&self) -> usize {
        self.shrink(self.embed_dim)
    }

    pub fn mask_dims(&self) -> Vec<usize> {
        let d = self.input_dim;
        let mut dims = vec![d];
        dims.extend(self.mask_hidden.iter().map(|&w| self.shrink(w)));
        dims.push(d);
        dims
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.encoder_hidden.iter().map(|&w| self.shrink(w)));
        dims.push(self.effective_embed_dim());
        dims
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = self.encoder_dims();
        dims.reverse();
        dims
    }

    pub fn aux_dims(&self) -> Vec<usize> {
        let z = self.effective_embed_dim();
        let mut dims = vec![z];
        dims.extend(self.aux_hidden.iter().map(|&w| self.shrink(w)));
        dims.push(z);
        dims
    }
}

/// All learnable weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub mask_generators: Vec<Mlp>,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub aux_head: Mlp,
}

/// Gradients mirroring [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub mask_generators: Vec<Vec<LayerGrad>>,
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
    pub aux_head: Vec<LayerGrad>,
}

impl ModelGrads {
    /// Flat view in the same order as [`Parameters::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.mask_generators {
            out.extend(grad_slices(g));
        }
        out.extend(grad_slices(&self.encoder));
        out.extend(grad_slices(&self.decoder));
        out.extend(grad_slices(&self.aux_head));
        out
    }
}

/// Every tensor one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub num_masks: usize,
    pub batch: usize,
    /// `X_mask`, `(T·B) × d`, entries in (0,1).
    pub masks: Matrix,
    /// `X_mask ⊙ X`, `(T·B) × d`.
    pub masked_input: Matrix,
    /// `e_mask`, `(T·B) × z`.
    pub masked_embedding: Matrix,
    /// `X̂`, `(T·B) × d`.
    pub reconstruction: Matrix,
    /// `g2(X)`, `B × z`. The stacked `e` is this block repeated `T` times.
    pub clean_embedding: Matrix,
    /// `ê`, `(T·B) × z`.
    pub predicted_embedding: Matrix,
    mask_tapes: Vec<Tape>,
    masked_encoder_tape: Tape,
    clean_encoder_tape: Tape,
    decoder_tape: Tape,
    aux_tape: Tape,
}

impl ForwardCache {
    /// Row block of mask `i` in a stacked tensor.
    pub fn block(&self, m: &Matrix, i: usize) -> Matrix {
        m.row_block(i * self.batch, (i + 1) * self.batch)
    }

    /// `e` in stacked form, `(T·B) × z`.
    pub fn replicated_clean_embedding(&self) -> Matrix {
        self.clean_embedding.tile_rows(self.num_masks)
    }
}

/// Upstream gradients flowing into [`Parameters::backward`].
#[derive(Debug, Clone)]
pub struct Upstream {
    /// dL/dX̂, `(T·B) × d`.
    pub reconstruction: Matrix,
    /// dL/dê, `(T·B) × z`.
    pub predicted_embedding: Matrix,
    /// dL/dX_mask from terms acting on the masks directly, `(T·B) × d`.
    pub masks: Option<Matrix>,
    /// dL/de, `B × z`.
    pub clean_embedding: Matrix,
}

impl Parameters {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = numerics::seeded_rng(seed);
        let mask_dims = config.mask_dims();
        let mask_generators = (0..config.num_masks)
            .map(|_| Mlp::new(&mask_dims, Activation::Relu, Activation::Sigmoid, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let encoder = Mlp::new(
            &config.encoder_dims(),
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )?;
        let decoder = Mlp::new(
            &config.decoder_dims(),
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )?;
        let aux_head = Mlp::new(
            &config.aux_dims(),
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )?;
        Ok(Self {
            mask_generators,
            encoder,
            decoder,
            aux_head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn num_masks(&self) -> usize {
        self.mask_generators.len()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let t = self.num_masks();
        let b = x.rows();
        let mut mask_tapes = Vec::with_capacity(t);
        let mut mask_blocks = Vec::with_capacity(t);
        for g in &self.mask_generators {
            let (m, tape) = g.forward(x)?;
            mask_blocks.push(m);
            mask_tapes.push(tape);
        }
        let masks = Matrix::vstack(&mask_blocks.iter().collect::<Vec<_>>())?;
        let masked_input = masks.hadamard(&x.tile_rows(t));
        let (masked_embedding, masked_encoder_tape) = self.encoder.forward(&masked_input)?;
        let (reconstruction, decoder_tape) = self.decoder.forward(&masked_embedding)?;
        let (predicted_embedding, aux_tape) = self.aux_head.forward(&masked_embedding)?;
        let (clean_embedding, clean_encoder_tape) = self.encoder.forward(x)?;
        Ok(ForwardCache {
            num_masks: t,
            batch: b,
            masks,
            masked_input,
            masked_embedding,
            reconstruction,
            clean_embedding,
            predicted_embedding,
            mask_tapes,
            masked_encoder_tape,
            clean_encoder_tape,
            decoder_tape,
            aux_tape,
        })
    }

    /// `g2(X)` without masking.
    pub fn clean_embedding(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        self.encoder.predict(x)
    }

    /// Gradients of a scalar objective given its upstream gradients on the forward tensors.
    pub fn backward(&self, cache: &ForwardCache, x: &Matrix, up: &Upstream) -> Result<ModelGrads> {
        let (decoder, d_emb_dec) = self
            .decoder
            .backward(&cache.decoder_tape, &up.reconstruction)?;
        let (aux_head, d_emb_aux) = self
            .aux_head
            .backward(&cache.aux_tape, &up.predicted_embedding)?;
        let mut d_emb = d_emb_dec;
        d_emb.add_assign(&d_emb_aux);
        let (mut encoder, d_masked_input) =
            self.encoder.backward(&cache.masked_encoder_tape, &d_emb)?;
        let (enc_clean, _) = self
            .encoder
            .backward(&cache.clean_encoder_tape, &up.clean_embedding)?;
        accumulate_grads(&mut encoder, &enc_clean);

        let mut d_masks = d_masked_input.hadamard(&x.tile_rows(cache.num_masks));
        if let Some(extra) = &up.masks {
            d_masks.add_assign(extra);
        }
        let mask_generators = self
            .mask_generators
            .iter()
            .zip(&cache.mask_tapes)
            .enumerate()
            .map(|(i, (g, tape))| {
                g.backward(tape, &cache.block(&d_masks, i))
                    .map(|(gr, _)| gr)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelGrads {
            mask_generators,
            encoder,
            decoder,
            aux_head,
        })
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            mask_generators: self.mask_generators.iter().map(Mlp::zero_grads).collect(),
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
            aux_head: self.aux_head.zero_grads(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for g in &mut self.mask_generators {
            out.extend(g.param_slices_mut());
        }
        out.extend(self.encoder.param_slices_mut());
        out.extend(self.decoder.param_slices_mut());
        out.extend(self.aux_head.param_slices_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.mask_generators
            .iter()
            .map(Mlp::param_count)
            .sum::<usize>()
            + self.encoder.param_count()
            + self.decoder.param_count()
            + self.aux_head.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.mask_generators.iter().all(Mlp::is_finite)
            && self.encoder.is_finite()
            && self.decoder.is_finite()
            && self.aux_head.is_finite()
    }
}

/// Values fixed at the end of training that scoring and adaptation depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// λ used in per-sample scores and in the adaptation objective.
    pub score_lambda: f64,
    /// Mean per-sample score over the training set.
    pub mean_train_loss: f64,
    /// Clamp for the abnormal-side reconstruction objective.
    pub recon_margin: f64,
    /// Clamp for the abnormal-side contrastive objective.
    pub contra_margin: f64,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Serialized model: config, calibration, optional feature scaler, weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub calibration: Calibration,
    pub scaler: Option<Scaler>,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        calibration: Calibration,
        scaler: Option<Scaler>,
        params: Parameters,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            config,
            calibration,
            scaler,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::config(format!(
                "unsupported checkpoint format {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

//! Deterministic toy bi-encoder shared by queries and documents.
//!
//! Pipeline for one stream: token lookup or frame adaptation to `n × d`,
//! one single-head attention layer (causal or bidirectional), mean pooling
//! over positions, a LoRA-adapted projection `W·x + (α/r)·B·(A·x)`, and L2
//! normalization. Every matrix except the LoRA factors is frozen and a pure
//! function of the seed.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::{self, FusionStrategy};
use crate::linalg::Matrix;
use crate::math;
use crate::media::{MediaItem, Stream, StreamContent};
use crate::rng::{self, fnv1a64};
use crate::vector::{normalize_f64, Embedding};

/// Label used for the single embedding produced by interleaved fusion.
pub const FUSED_LABEL: &str = "fused";

/// Whitespace-split, lowercase, FNV-1a 64 hash each token, reduce modulo `vocab_size`.
pub fn tokenize(text: &str, vocab_size: u32) -> Vec<u32> {
    let vocab = vocab_size.max(1) as u64;
    text.split_whitespace()
        .map(|tok| (fnv1a64(tok.to_lowercase().as_bytes()) % vocab) as u32)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MaskMode {
    Causal,
    #[default]
    Bidirectional,
}

impl MaskMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskMode::Causal => "causal",
            MaskMode::Bidirectional => "bidirectional",
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Self::Causal),
            "bidirectional" => Ok(Self::Bidirectional),
            other => Err(Error::InvalidConfig(format!(
                "unknown mask mode {other:?} (expected causal|bidirectional)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: u32,
    pub dim: usize,
    pub input_dim: usize,
    pub mask_mode: MaskMode,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            dim: 32,
            input_dim: 16,
            mask_mode: MaskMode::Bidirectional,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig("vocab_size must be at least 2".to_string()));
        }
        if self.dim == 0 || self.input_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".to_string()));
        }
        Ok(())
    }
}

/// LoRA rank and alpha; the update is scaled by `alpha / rank`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        // alpha / rank = 2, the ratio of r=16, alpha=32 at backbone scale
        Self { rank: 2, alpha: 4.0 }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.rank == 0 || self.rank > dim {
            return Err(Error::InvalidConfig(format!(
                "lora rank {} must be in 1..={dim}",
                self.rank
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig("lora alpha must be positive".to_string()));
        }
        Ok(())
    }
}

/// All encoder matrices. Only `lora_a` and `lora_b` are ever trained.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    /// `vocab_size × d`
    pub token_table: Matrix,
    /// `d_in × d`; a frame `x` maps to `frame_adapterᵀ · x`
    pub frame_adapter: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    /// Frozen base of the output projection, `d × d`.
    pub projection: Matrix,
    /// `r × d`
    pub lora_a: Matrix,
    /// `d × r`, zero at initialization.
    pub lora_b: Matrix,
    pub lora_scaling: f64,
}

impl EncoderWeights {
    pub fn init(cfg: &EncoderConfig, lora: &LoraConfig) -> Result<Self> {
        cfg.validate()?;
        lora.validate(cfg.dim)?;
        let d = cfg.dim;
        let bound = 1.0 / math::sqrt(d as f64);
        let draw = |label: &str, rows: usize, cols: usize| {
            Matrix::uniform(rows, cols, bound, &mut rng::derive(cfg.seed, label))
        };
        Ok(Self {
            token_table: draw("encoder.token_table", cfg.vocab_size as usize, d),
            frame_adapter: draw("encoder.frame_adapter", cfg.input_dim, d),
            wq: draw("encoder.attention.wq", d, d),
            wk: draw("encoder.attention.wk", d, d),
            wv: draw("encoder.attention.wv", d, d),
            wo: draw("encoder.attention.wo", d, d),
            projection: draw("encoder.projection", d, d),
            lora_a: draw("lora.a", lora.rank, d),
            lora_b: Matrix::zeros(d, lora.rank),
            lora_scaling: lora.scaling(),
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn rank(&self) -> usize {
        self.lora_a.rows()
    }
}

/// Row-stochastic attention matrix for `x` (`n × d`).
pub fn attention_weights(x: &Matrix, mode: MaskMode, weights: &EncoderWeights) -> Matrix {
    let n = x.rows();
    let d = x.cols();
    let scale = 1.0 / math::sqrt(d as f64);
    let queries: Vec<Vec<f64>> = (0..n).map(|i| weights.wq.mul_vec(x.row(i))).collect();
    let keys: Vec<Vec<f64>> = (0..n).map(|j| weights.wk.mul_vec(x.row(j))).collect();
    let mut probs = Matrix::zeros(n, n);
    for (i, q) in queries.iter().enumerate() {
        let visible = match mode {
            MaskMode::Causal => i + 1,
            MaskMode::Bidirectional => n,
        };
        let logits: Vec<f64> = keys[..visible]
            .iter()
            .map(|k| math::dot_f64(q, k) * scale)
            .collect();
        let lse = math::log_sum_exp(&logits);
        for (j, l) in logits.iter().enumerate() {
            probs.set(i, j, math::exp(l - lse));
        }
    }
    probs
}

/// Single-head scaled dot-product attention followed by the output map `Wo`.
pub fn attention_forward(x: &Matrix, mode: MaskMode, weights: &EncoderWeights) -> Matrix {
    let n = x.rows();
    let d = x.cols();
    let probs = attention_weights(x, mode, weights);
    let values: Vec<Vec<f64>> = (0..n).map(|j| weights.wv.mul_vec(x.row(j))).collect();
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let mut ctx = vec![0.0; d];
        for (j, v) in values.iter().enumerate() {
            let a = probs.get(i, j);
            if a == 0.0 {
                continue;
            }
            for c in 0..d {
                ctx[c] += a * v[c];
            }
        }
        out.row_mut(i).copy_from_slice(&weights.wo.mul_vec(&ctx));
    }
    out
}

/// Column means of `x`.
pub fn mean_pool(x: &Matrix) -> Vec<f64> {
    let n = x.rows() as f64;
    let mut out = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (o, v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    lora: LoraConfig,
    weights: EncoderWeights,
}

impl Encoder {
    pub fn new(config: EncoderConfig, lora: LoraConfig) -> Result<Self> {
        let weights = EncoderWeights::init(&config, &lora)?;
        Ok(Self {
            config,
            lora,
            weights,
        })
    }

    /// Rebuilds the frozen weights from `config` and installs trained LoRA factors.
    pub fn with_lora_factors(
        config: EncoderConfig,
        lora: LoraConfig,
        lora_a: Matrix,
        lora_b: Matrix,
    ) -> Result<Self> {
        let mut enc = Self::new(config, lora)?;
        let (r, d) = (lora.rank, enc.config.dim);
        if (lora_a.rows(), lora_a.cols()) != (r, d) || (lora_b.rows(), lora_b.cols()) != (d, r) {
            return Err(Error::InvalidConfig(format!(
                "lora factors must be {r}x{d} and {d}x{r}"
            )));
        }
        enc.weights.lora_a = lora_a;
        enc.weights.lora_b = lora_b;
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn lora_config(&self) -> &LoraConfig {
        &self.lora
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut EncoderWeights {
        &mut self.weights
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Maps raw frame features into model space, one row per frame.
    pub fn adapt_frames<'a, I>(&self, frames: I) -> Result<Matrix>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let d = self.config.dim;
        let mut data = Vec::new();
        let mut n = 0;
        for f in frames {
            if f.len() != self.config.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.input_dim,
                    actual: f.len(),
                });
            }
            let x: Vec<f64> = f.iter().map(|&v| v as f64).collect();
            data.extend(self.weights.frame_adapter.mul_vec_transposed(&x));
            n += 1;
        }
        Ok(Matrix::from_rows(n, d, data))
    }

    /// The `n × d` input sequence for a stream.
    pub fn embed_inputs(&self, stream: &Stream) -> Result<Matrix> {
        match stream.content() {
            StreamContent::Tokens(ids) => {
                let d = self.config.dim;
                let mut data = Vec::with_capacity(ids.len() * d);
                for &id in ids {
                    if id >= self.config.vocab_size {
                        return Err(Error::InvalidStream(format!(
                            "token id {id} outside vocabulary of {}",
                            self.config.vocab_size
                        )));
                    }
                    data.extend_from_slice(self.weights.token_table.row(id as usize));
                }
                Ok(Matrix::from_rows(ids.len(), d, data))
            }
            StreamContent::Timeline(frames) => {
                self.adapt_frames(frames.iter().map(|f| f.features.as_slice()))
            }
        }
    }

    /// Attention then mean pooling over an already-embedded sequence.
    pub fn pool_sequence(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.rows() == 0 {
            return Err(Error::EmptyStream);
        }
        let h = attention_forward(x, self.config.mask_mode, &self.weights);
        Ok(mean_pool(&h))
    }

    /// Pooled representation of one stream, before projection.
    pub fn pooled_stream(&self, stream: &Stream) -> Result<Vec<f64>> {
        self.pool_sequence(&self.embed_inputs(stream)?)
    }

    /// Pooled representation of the interleaved timeline of a multi-stream item.
    pub fn pooled_fused(&self, item: &MediaItem) -> Result<Vec<f64>> {
        let streams: Vec<&Stream> = item.streams().iter().collect();
        let merged = fusion::interleave(&streams)?;
        let x = self.adapt_frames(merged.frames().map(|f| f.features.as_slice()))?;
        self.pool_sequence(&x)
    }

    /// Pooled vector for an item reduced to one embedding: its only stream, or
    /// the interleaved timeline when it has several.
    pub fn pooled_item(&self, item: &MediaItem) -> Result<Vec<f64>> {
        match item.streams() {
            [single] => self.pooled_stream(single),
            _ => self.pooled_fused(item),
        }
    }

    /// `W·x + (α/r)·B·(A·x)` in full precision.
    pub fn project(&self, pooled: &[f64]) -> Vec<f64> {
        let w = &self.weights;
        let mut z = w.projection.mul_vec(pooled);
        let ax = w.lora_a.mul_vec(pooled);
        let bax = w.lora_b.mul_vec(&ax);
        for (zi, bi) in z.iter_mut().zip(&bax) {
            *zi += w.lora_scaling * bi;
        }
        z
    }

    /// Projection with the frozen base matrix only.
    pub fn project_frozen(&self, pooled: &[f64]) -> Vec<f64> {
        self.weights.projection.mul_vec(pooled)
    }

    /// Projects and normalizes a pooled vector.
    pub fn embed_pooled(&self, pooled: &[f64]) -> Result<Embedding> {
        normalize_f64(&self.project(pooled))
    }

    pub fn encode_stream(&self, stream: &Stream) -> Result<Embedding> {
        if stream.is_empty() {
            return Err(Error::EmptyStream);
        }
        self.embed_pooled(&self.pooled_stream(stream)?)
    }

    /// The base path: same pipeline with the LoRA term left out.
    pub fn encode_stream_frozen(&self, stream: &Stream) -> Result<Embedding> {
        if stream.is_empty() {
            return Err(Error::EmptyStream);
        }
        normalize_f64(&self.project_frozen(&self.pooled_stream(stream)?))
    }

    /// Encodes an item under a fusion strategy.
    ///
    /// Separate: one embedding per stream labeled by modality. Interleaved:
    /// a single `"fused"` embedding, except that single-stream items keep
    /// their modality label since there is nothing to fuse.
    pub fn encode_item(
        &self,
        item: &MediaItem,
        strategy: FusionStrategy,
    ) -> Result<Vec<(String, Embedding)>> {
        match (strategy, item.streams()) {
            (_, [single]) => Ok(vec![(
                single.modality().as_str().to_string(),
                self.encode_stream(single)?,
            )]),
            (FusionStrategy::Separate, streams) => streams
                .iter()
                .map(|s| Ok((s.modality().as_str().to_string(), self.encode_stream(s)?)))
                .collect(),
            (FusionStrategy::Interleaved, _) => Ok(vec![(
                FUSED_LABEL.to_string(),
                self.embed_pooled(&self.pooled_fused(item)?)?,
            )]),
        }
    }
}

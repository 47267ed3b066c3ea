//! Miniature encoder-decoder transformer with two preference extractors.
//!
//! Four components share one token embedding: the article encoder, the
//! decoder (with cross-attention), and the style and trend extractors
//! (each an encoder stack followed by mean pooling). The extractor outputs
//! are added onto every encoder hidden state before decoding, and the
//! output projection is tied to the token embedding.

pub mod checkpoint;
pub mod layers;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbols;
use layers::{DecoderLayer, DecoderLayerCache, DropoutCtx, EncoderLayer, EncoderLayerCache, LayerNorm, LayerNormCache, Param};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("decoder prefix must start with the bos token")]
    MissingBos,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// 0 means "fill in from the built vocabulary before use".
    pub vocab_size: usize,
    pub d_model: usize,
    /// Depth shared by the encoder, decoder, and both extractors.
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_width: 256,
            max_positions: 512,
            dropout: 0.0,
            seed: 3407,
        }
    }
}

impl ModelConfig {
    /// Small enough for gradient checks and overfit tests in seconds.
    pub fn toy(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_width: 256,
            max_positions: 64,
            dropout: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < symbols::RESERVED.len() {
            return Err(ModelError::BadConfig("vocab smaller than the reserved symbols".into()));
        }
        if self.n_layers == 0 || self.ffn_width == 0 || self.max_positions == 0 {
            return Err(ModelError::BadConfig("layers, ffn width, and positions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Encoder hidden states plus the attention mask marking real (non-pad)
/// positions.
#[derive(Debug, Clone)]
pub struct HiddenSeq {
    pub states: Array2<f64>,
    pub mask: Vec<bool>,
}

pub struct EncoderStack {
    pub pos: Param,
    pub layers: Vec<EncoderLayer>,
    pub final_ln: LayerNorm,
}

pub struct EncoderStackCache {
    tokens: Vec<u32>,
    h0_drop: Option<Array2<f64>>,
    layer_caches: Vec<EncoderLayerCache>,
    final_ln: LayerNormCache,
}

impl EncoderStack {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        EncoderStack {
            pos: Param::randn(rng, 0.02, cfg.max_positions, cfg.d_model),
            layers: (0..cfg.n_layers)
                .map(|_| EncoderLayer::new(rng, 0.02, cfg.d_model, cfg.n_heads, cfg.ffn_width))
                .collect(),
            final_ln: LayerNorm::new(cfg.d_model),
        }
    }

    fn forward(
        &self,
        tok_emb: &Param,
        tokens: &[u32],
        drop: &mut DropoutCtx,
    ) -> (Array2<f64>, Vec<bool>, EncoderStackCache) {
        let d = tok_emb.w.ncols();
        let mask: Vec<bool> = tokens.iter().map(|&t| t != symbols::PAD_ID).collect();
        let mut h = Array2::zeros((tokens.len(), d));
        for (i, &t) in tokens.iter().enumerate() {
            let row = &tok_emb.w.row(t as usize) + &self.pos.w.row(i);
            h.row_mut(i).assign(&row);
        }
        let h0_drop = drop.mask(h.nrows(), h.ncols());
        if let Some(m) = &h0_drop {
            h *= m;
        }
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, &mask, drop);
            layer_caches.push(cache);
            h = next;
        }
        let (out, final_ln) = self.final_ln.forward(&h);
        let cache = EncoderStackCache { tokens: tokens.to_vec(), h0_drop, layer_caches, final_ln };
        (out, mask, cache)
    }

    fn backward(&mut self, tok_emb: &mut Param, cache: &EncoderStackCache, dh: &Array2<f64>) {
        let mut dh = self.final_ln.backward(&cache.final_ln, dh);
        for (layer, lcache) in self.layers.iter_mut().zip(&cache.layer_caches).rev() {
            dh = layer.backward(lcache, &dh);
        }
        if let Some(m) = &cache.h0_drop {
            dh *= m;
        }
        for (i, &t) in cache.tokens.iter().enumerate() {
            let mut emb_row = tok_emb.g.row_mut(t as usize);
            emb_row += &dh.row(i);
            let mut pos_row = self.pos.g.row_mut(i);
            pos_row += &dh.row(i);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((format!("{prefix}.pos"), &mut self.pos));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.params_mut(&format!("{prefix}.layer{i}"), out);
        }
        self.final_ln.params_mut(&format!("{prefix}.final_ln"), out);
    }
}

pub struct DecoderStack {
    pub pos: Param,
    pub layers: Vec<DecoderLayer>,
    pub final_ln: LayerNorm,
}

pub struct DecoderStackCache {
    tokens: Vec<u32>,
    h0_drop: Option<Array2<f64>>,
    pub layer_caches: Vec<DecoderLayerCache>,
    final_ln: LayerNormCache,
    /// Final hidden states, kept for the tied output projection.
    pub hidden: Array2<f64>,
}

impl DecoderStack {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        DecoderStack {
            pos: Param::randn(rng, 0.02, cfg.max_positions, cfg.d_model),
            layers: (0..cfg.n_layers)
                .map(|_| DecoderLayer::new(rng, 0.02, cfg.d_model, cfg.n_heads, cfg.ffn_width))
                .collect(),
            final_ln: LayerNorm::new(cfg.d_model),
        }
    }

    fn forward(
        &self,
        tok_emb: &Param,
        tokens: &[u32],
        memory: &Array2<f64>,
        memory_mask: &[bool],
        drop: &mut DropoutCtx,
    ) -> DecoderStackCache {
        let d = tok_emb.w.ncols();
        let self_mask: Vec<bool> = tokens.iter().map(|&t| t != symbols::PAD_ID).collect();
        let mut h = Array2::zeros((tokens.len(), d));
        for (i, &t) in tokens.iter().enumerate() {
            let row = &tok_emb.w.row(t as usize) + &self.pos.w.row(i);
            h.row_mut(i).assign(&row);
        }
        let h0_drop = drop.mask(h.nrows(), h.ncols());
        if let Some(m) = &h0_drop {
            h *= m;
        }
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, &self_mask, memory, memory_mask, drop);
            layer_caches.push(cache);
            h = next;
        }
        let (hidden, final_ln) = self.final_ln.forward(&h);
        DecoderStackCache { tokens: tokens.to_vec(), h0_drop, layer_caches, final_ln, hidden }
    }

    /// Backpropagates through the stack, accumulating the gradient on the
    /// encoder memory into `dmem`.
    fn backward(
        &mut self,
        tok_emb: &mut Param,
        cache: &DecoderStackCache,
        dh: &Array2<f64>,
        dmem: &mut Array2<f64>,
    ) {
        let mut dh = self.final_ln.backward(&cache.final_ln, dh);
        for (layer, lcache) in self.layers.iter_mut().zip(&cache.layer_caches).rev() {
            dh = layer.backward(lcache, &dh, dmem);
        }
        if let Some(m) = &cache.h0_drop {
            dh *= m;
        }
        for (i, &t) in cache.tokens.iter().enumerate() {
            let mut emb_row = tok_emb.g.row_mut(t as usize);
            emb_row += &dh.row(i);
            let mut pos_row = self.pos.g.row_mut(i);
            pos_row += &dh.row(i);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((format!("{prefix}.pos"), &mut self.pos));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.params_mut(&format!("{prefix}.layer{i}"), out);
        }
        self.final_ln.params_mut(&format!("{prefix}.final_ln"), out);
    }
}

/// All weights of the model. The token embedding is the single shared
/// instance referenced by all four components and is tied to the output
/// projection.
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub tok_emb: Param,
    pub encoder: EncoderStack,
    pub decoder: DecoderStack,
    pub style_extractor: EncoderStack,
    pub trend_extractor: EncoderStack,
}

/// Cache of one extractor forward; `None` when the input was empty.
pub struct ExtractorCache {
    stack: EncoderStackCache,
    mask: Vec<bool>,
    n_unpadded: usize,
}

impl ModelParams {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(ModelParams {
            cfg: cfg.clone(),
            tok_emb: Param::randn(&mut rng, 0.02, cfg.vocab_size, cfg.d_model),
            encoder: EncoderStack::new(&mut rng, cfg),
            decoder: DecoderStack::new(&mut rng, cfg),
            style_extractor: EncoderStack::new(&mut rng, cfg),
            trend_extractor: EncoderStack::new(&mut rng, cfg),
        })
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        if tokens.len() > self.cfg.max_positions {
            return Err(ModelError::TooLong { len: tokens.len(), max: self.cfg.max_positions });
        }
        for &t in tokens {
            if t as usize >= self.cfg.vocab_size {
                return Err(ModelError::TokenOutOfRange { id: t, vocab_size: self.cfg.vocab_size });
            }
        }
        Ok(())
    }

    /// Encoder forward in eval mode.
    pub fn encode(&self, tokens: &[u32]) -> Result<HiddenSeq, ModelError> {
        self.check_tokens(tokens)?;
        let (states, mask, _) = self.encoder.forward(&self.tok_emb, tokens, &mut DropoutCtx::eval());
        Ok(HiddenSeq { states, mask })
    }

    pub(crate) fn encode_train(
        &self,
        tokens: &[u32],
        drop: &mut DropoutCtx,
    ) -> Result<(HiddenSeq, EncoderStackCache), ModelError> {
        self.check_tokens(tokens)?;
        let (states, mask, cache) = self.encoder.forward(&self.tok_emb, tokens, drop);
        Ok((HiddenSeq { states, mask }, cache))
    }

    pub(crate) fn encoder_backward(&mut self, cache: &EncoderStackCache, dh: &Array2<f64>) {
        // split borrow: the stack never touches tok_emb internally
        let ModelParams { encoder, tok_emb, .. } = self;
        encoder.backward(tok_emb, cache, dh);
    }

    fn extract(
        stack: &EncoderStack,
        tok_emb: &Param,
        tokens: &[u32],
        drop: &mut DropoutCtx,
    ) -> (Array1<f64>, Option<ExtractorCache>) {
        let d = tok_emb.w.ncols();
        let n_unpadded = tokens.iter().filter(|&&t| t != symbols::PAD_ID).count();
        if n_unpadded == 0 {
            return (Array1::zeros(d), None);
        }
        let (h, mask, cache) = stack.forward(tok_emb, tokens, drop);
        let mut pooled = Array1::zeros(d);
        for (i, &ok) in mask.iter().enumerate() {
            if ok {
                pooled += &h.row(i);
            }
        }
        pooled /= n_unpadded as f64;
        (pooled, Some(ExtractorCache { stack: cache, mask, n_unpadded }))
    }

    fn extract_backward(
        stack: &mut EncoderStack,
        tok_emb: &mut Param,
        cache: &Option<ExtractorCache>,
        dpool: &Array1<f64>,
    ) {
        let Some(cache) = cache else { return };
        let n = cache.mask.len();
        let mut dh = Array2::zeros((n, dpool.len()));
        let scale = 1.0 / cache.n_unpadded as f64;
        for (i, &ok) in cache.mask.iter().enumerate() {
            if ok {
                dh.row_mut(i).assign(&(dpool * scale));
            }
        }
        stack.backward(tok_emb, &cache.stack, &dh);
    }

    /// Mean-pooled style encoding; an empty history yields the zero vector
    /// so fusion degrades to the plain encoder-decoder.
    pub fn extract_style(&self, tokens: &[u32]) -> Result<Array1<f64>, ModelError> {
        self.check_tokens(tokens)?;
        Ok(Self::extract(&self.style_extractor, &self.tok_emb, tokens, &mut DropoutCtx::eval()).0)
    }

    pub fn extract_trend(&self, tokens: &[u32]) -> Result<Array1<f64>, ModelError> {
        self.check_tokens(tokens)?;
        Ok(Self::extract(&self.trend_extractor, &self.tok_emb, tokens, &mut DropoutCtx::eval()).0)
    }

    pub(crate) fn extract_style_train(
        &self,
        tokens: &[u32],
        drop: &mut DropoutCtx,
    ) -> Result<(Array1<f64>, Option<ExtractorCache>), ModelError> {
        self.check_tokens(tokens)?;
        Ok(Self::extract(&self.style_extractor, &self.tok_emb, tokens, drop))
    }

    pub(crate) fn extract_trend_train(
        &self,
        tokens: &[u32],
        drop: &mut DropoutCtx,
    ) -> Result<(Array1<f64>, Option<ExtractorCache>), ModelError> {
        self.check_tokens(tokens)?;
        Ok(Self::extract(&self.trend_extractor, &self.tok_emb, tokens, drop))
    }

    pub(crate) fn extract_style_backward(&mut self, cache: &Option<ExtractorCache>, dpool: &Array1<f64>) {
        let ModelParams { style_extractor, tok_emb, .. } = self;
        Self::extract_backward(style_extractor, tok_emb, cache, dpool);
    }

    pub(crate) fn extract_trend_backward(&mut self, cache: &Option<ExtractorCache>, dpool: &Array1<f64>) {
        let ModelParams { trend_extractor, tok_emb, .. } = self;
        Self::extract_backward(trend_extractor, tok_emb, cache, dpool);
    }

    /// Adds the style and trend encodings onto every encoder state.
    pub fn fuse(hidden: &HiddenSeq, style: &Array1<f64>, trend: &Array1<f64>) -> HiddenSeq {
        assert_eq!(hidden.states.ncols(), style.len(), "style encoding width mismatch");
        assert_eq!(hidden.states.ncols(), trend.len(), "trend encoding width mismatch");
        let mut states = hidden.states.clone();
        let shift = style + trend;
        for mut row in states.axis_iter_mut(Axis(0)) {
            row += &shift;
        }
        HiddenSeq { states, mask: hidden.mask.clone() }
    }

    pub(crate) fn decoder_forward(
        &self,
        tokens: &[u32],
        memory: &HiddenSeq,
        drop: &mut DropoutCtx,
    ) -> Result<DecoderStackCache, ModelError> {
        self.check_tokens(tokens)?;
        Ok(self.decoder.forward(&self.tok_emb, tokens, &memory.states, &memory.mask, drop))
    }

    pub(crate) fn decoder_backward(
        &mut self,
        cache: &DecoderStackCache,
        dh: &Array2<f64>,
        dmem: &mut Array2<f64>,
    ) {
        let ModelParams { decoder, tok_emb, .. } = self;
        decoder.backward(tok_emb, cache, dh, dmem);
    }

    /// Logits via the tied embedding: `h · E^T`.
    pub(crate) fn logits(&self, hidden: &Array2<f64>) -> Array2<f64> {
        hidden.dot(&self.tok_emb.w.t())
    }

    pub(crate) fn logits_backward(&mut self, hidden: &Array2<f64>, dlogits: &Array2<f64>) -> Array2<f64> {
        self.tok_emb.g += &dlogits.t().dot(hidden);
        dlogits.dot(&self.tok_emb.w)
    }

    /// Next-token distribution after the given prefix (teacher-forced
    /// decoder over fused encoder states). The prefix must start with bos.
    pub fn decode_step(&self, fused: &HiddenSeq, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        Ok(self.decode_step_with_attention(fused, prefix)?.0)
    }

    /// As `decode_step`, also returning the last position's cross-attention
    /// over the source, averaged over the heads of the final decoder layer.
    pub fn decode_step_with_attention(
        &self,
        fused: &HiddenSeq,
        prefix: &[u32],
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        if prefix.first() != Some(&symbols::BOS_ID) {
            return Err(ModelError::MissingBos);
        }
        let cache = self.decoder_forward(prefix, fused, &mut DropoutCtx::eval())?;
        let logits = self.logits(&cache.hidden);
        let last = logits.nrows() - 1;
        let row = logits.row(last);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs = exps.into_iter().map(|e| e / sum).collect();
        let attn = cache.layer_caches.last().unwrap().cross_attn.mean_attention_row(last);
        Ok((probs, attn))
    }

    /// Deterministic enumeration of every parameter with a stable path
    /// name; ordering defines the checkpoint and optimizer-state layout.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        out.push(("tok_emb".to_string(), &mut self.tok_emb));
        self.encoder.params_mut("encoder", &mut out);
        self.decoder.params_mut("decoder", &mut out);
        self.style_extractor.params_mut("style_extractor", &mut out);
        self.trend_extractor.params_mut("trend_extractor", &mut out);
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Zeroes the gradients of everything except the two extractor stacks;
    /// pretraining freezes the encoder, decoder, and shared embedding.
    pub fn zero_frozen_grads(&mut self) {
        for (name, p) in self.params_mut() {
            if !is_extractor_param(&name) {
                p.zero_grad();
            }
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|(_, p)| p.w.len()).sum()
    }
}

/// Whether a parameter path belongs to the style or trend extractor (the
/// only parameters that stay trainable during pretraining).
pub fn is_extractor_param(name: &str) -> bool {
    name.starts_with("style_extractor") || name.starts_with("trend_extractor")
}

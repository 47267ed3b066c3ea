//! Building blocks of the encoder-decoder: linear, layer norm, multi-head
//! attention, and the GELU feed-forward, each with an explicit backward
//! pass that accumulates parameter gradients.
//!
//! Forward passes return a cache holding exactly the intermediates the
//! backward pass needs; parameters stay shared and immutable during
//! inference.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::synth::randn;

const LN_EPS: f64 = 1e-5;

/// One parameter tensor and its gradient accumulator. Vector-shaped
/// parameters (biases, layer-norm scales) are stored as single-row
/// matrices so optimizer state stays uniform.
#[derive(Debug, Clone)]
pub struct Param {
    pub w: Array2<f64>,
    pub g: Array2<f64>,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param { w: Array2::zeros((rows, cols)), g: Array2::zeros((rows, cols)) }
    }

    pub fn ones_row(cols: usize) -> Self {
        Param { w: Array2::ones((1, cols)), g: Array2::zeros((1, cols)) }
    }

    pub fn randn(rng: &mut ChaCha8Rng, std: f64, rows: usize, cols: usize) -> Self {
        let mut w = Array2::zeros((rows, cols));
        for v in w.iter_mut() {
            *v = std * randn(rng);
        }
        Param { w, g: Array2::zeros((rows, cols)) }
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }
}

/// Dropout state for one forward pass. `eval()` disables it entirely; the
/// training loop seeds a fresh rng per example so results are
/// schedule-independent.
pub struct DropoutCtx {
    pub rate: f64,
    pub rng: Option<ChaCha8Rng>,
}

impl DropoutCtx {
    pub fn eval() -> Self {
        DropoutCtx { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: ChaCha8Rng) -> Self {
        DropoutCtx { rate, rng: Some(rng) }
    }

    /// Inverted-dropout mask (0 or 1/(1-p)) or None when inactive.
    pub(crate) fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        let rng = self.rng.as_mut()?;
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let mut m = Array2::zeros((rows, cols));
        for v in m.iter_mut() {
            *v = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
        }
        Some(m)
    }
}

fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

pub struct Linear {
    pub w: Param, // [in, out]
    pub b: Param, // [1, out]
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, std: f64, fan_in: usize, fan_out: usize) -> Self {
        Linear { w: Param::randn(rng, std, fan_in, fan_out), b: Param::zeros(1, fan_out) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.w) + &self.b.w
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.w.g += &x.t().dot(dy);
        self.b.g += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.w.t())
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

pub struct LayerNorm {
    pub gamma: Param, // [1, d]
    pub beta: Param,  // [1, d]
}

pub struct LayerNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm { gamma: Param::ones_row(d), beta: Param::zeros(1, d) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).unwrap();
        let mut x_hat = x.clone();
        for (mut row, &m) in x_hat.axis_iter_mut(Axis(0)).zip(mean.iter()) {
            row -= m;
        }
        let var = x_hat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        for (mut row, &s) in x_hat.axis_iter_mut(Axis(0)).zip(inv_std.iter()) {
            row *= s;
        }
        let y = &x_hat * &self.gamma.w + &self.beta.w;
        (y, LayerNormCache { x_hat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {

        self.gamma.g += &(dy * &cache.x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.g += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let g = dy * &self.gamma.w;
        let mean_g = g.mean_axis(Axis(1)).unwrap();
        let mean_gx = (&g * &cache.x_hat).mean_axis(Axis(1)).unwrap();
        let mut dx = g;
        for (i, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
            let xh = cache.x_hat.row(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = cache.inv_std[i] * (*v - mean_g[i] - xh[j] * mean_gx[i]);
            }
        }
        dx
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

/// Row-wise softmax in place. Entries at -inf become exactly zero.
fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(max.is_finite(), "softmax row fully masked");
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

pub struct AttentionCache {
    q_in: Array2<f64>,
    kv_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head attention probabilities, [m, n] each.
    pub attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl AttentionCache {
    /// Attention averaged over heads for one query position; used by the
    /// coverage penalty.
    pub fn mean_attention_row(&self, row: usize) -> Vec<f64> {
        let n = self.attn[0].ncols();
        let mut out = vec![0.0; n];
        for head in &self.attn {
            for (o, a) in out.iter_mut().zip(head.row(row).iter()) {
                *o += a;
            }
        }
        for o in &mut out {
            *o /= self.attn.len() as f64;
        }
        out
    }
}

impl MultiHeadAttention {
    pub fn new(rng: &mut ChaCha8Rng, std: f64, d: usize, n_heads: usize) -> Self {
        MultiHeadAttention {
            wq: Linear::new(rng, std, d, d),
            wk: Linear::new(rng, std, d, d),
            wv: Linear::new(rng, std, d, d),
            wo: Linear::new(rng, std, d, d),
            n_heads,
        }
    }

    /// `key_mask[j] == false` hides key/value position j from every query.
    /// With `causal`, query i additionally ignores keys j > i.
    pub fn forward(
        &self,
        q_in: &Array2<f64>,
        kv_in: &Array2<f64>,
        key_mask: &[bool],
        causal: bool,
    ) -> (Array2<f64>, AttentionCache) {
        let (m, d) = (q_in.nrows(), q_in.ncols());
        let n = kv_in.nrows();
        debug_assert_eq!(key_mask.len(), n);
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(q_in);
        let k = self.wk.forward(kv_in);
        let v = self.wv.forward(kv_in);
        let mut ctx = Array2::zeros((m, d));
        let mut attn = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for (j, &ok) in key_mask.iter().enumerate() {
                if !ok {
                    scores.column_mut(j).fill(f64::NEG_INFINITY);
                }
            }
            if causal {
                for i in 0..m {
                    for j in (i + 1)..n {
                        scores[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows(&mut scores);
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            attn.push(scores);
        }
        let out = self.wo.forward(&ctx);
        let cache = AttentionCache { q_in: q_in.clone(), kv_in: kv_in.clone(), q, k, v, attn, ctx };
        (out, cache)
    }

    /// Returns (d_q_in, d_kv_in). For self-attention the caller adds both
    /// into the same upstream gradient.
    pub fn backward(&mut self, cache: &AttentionCache, dy: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let dh = dy.ncols() / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.wo.backward(&cache.ctx, dy);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &cache.attn[h];
            let dctx_h = dctx.slice(cols);
            let da = dctx_h.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
            // softmax backward per row; masked entries have a == 0 so their
            // gradient vanishes automatically
            let mut ds = &da * a;
            for (mut row, a_row) in ds.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))) {
                let dot: f64 = row.sum();
                for (v, &p) in row.iter_mut().zip(a_row.iter()) {
                    *v -= dot * p;
                }
            }
            dq.slice_mut(cols).assign(&(ds.dot(&cache.k.slice(cols)) * scale));
            dk.slice_mut(cols).assign(&(ds.t().dot(&cache.q.slice(cols)) * scale));
        }
        let dq_in = self.wq.backward(&cache.q_in, &dq);
        let mut dkv_in = self.wk.backward(&cache.kv_in, &dk);
        dkv_in += &self.wv.backward(&cache.kv_in, &dv);
        (dq_in, dkv_in)
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.wq.params_mut(&format!("{prefix}.wq"), out);
        self.wk.params_mut(&format!("{prefix}.wk"), out);
        self.wv.params_mut(&format!("{prefix}.wv"), out);
        self.wo.params_mut(&format!("{prefix}.wo"), out);
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let t = (C * (x + A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

pub struct FeedForwardCache {
    x: Array2<f64>,
    u: Array2<f64>,
    a: Array2<f64>,
}

impl FeedForward {
    pub fn new(rng: &mut ChaCha8Rng, std: f64, d: usize, width: usize) -> Self {
        FeedForward { lin1: Linear::new(rng, std, d, width), lin2: Linear::new(rng, std, width, d) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let u = self.lin1.forward(x);
        let a = u.mapv(gelu);
        let y = self.lin2.forward(&a);
        (y, FeedForwardCache { x: x.clone(), u, a })
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dy: &Array2<f64>) -> Array2<f64> {
        let da = self.lin2.backward(&cache.a, dy);
        let du = da * cache.u.mapv(gelu_grad);
        self.lin1.backward(&cache.x, &du)
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.lin1.params_mut(&format!("{prefix}.lin1"), out);
        self.lin2.params_mut(&format!("{prefix}.lin2"), out);
    }
}

/// Pre-norm encoder layer: x + Attn(LN(x)), then x + FFN(LN(x)).
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

pub struct EncoderLayerCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    attn_drop: Option<Array2<f64>>,
    ln2: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_drop: Option<Array2<f64>>,
}

impl EncoderLayer {
    pub fn new(rng: &mut ChaCha8Rng, std: f64, d: usize, n_heads: usize, ffn_width: usize) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(d),
            attn: MultiHeadAttention::new(rng, std, d, n_heads),
            ln2: LayerNorm::new(d),
            ffn: FeedForward::new(rng, std, d, ffn_width),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mask: &[bool],
        drop: &mut DropoutCtx,
    ) -> (Array2<f64>, EncoderLayerCache) {
        let (h1, ln1) = self.ln1.forward(x);
        let (mut s_out, attn) = self.attn.forward(&h1, &h1, mask, false);
        let attn_drop = drop.mask(s_out.nrows(), s_out.ncols());
        apply_mask(&mut s_out, &attn_drop);
        let x1 = x + &s_out;
        let (h2, ln2) = self.ln2.forward(&x1);
        let (mut f_out, ffn) = self.ffn.forward(&h2);
        let ffn_drop = drop.mask(f_out.nrows(), f_out.ncols());
        apply_mask(&mut f_out, &ffn_drop);
        let y = &x1 + &f_out;
        (y, EncoderLayerCache { ln1, attn, attn_drop, ln2, ffn, ffn_drop })
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut df = dy.clone();
        apply_mask(&mut df, &cache.ffn_drop);
        let dh2 = self.ffn.backward(&cache.ffn, &df);
        let mut dx1 = dy.clone();
        dx1 += &self.ln2.backward(&cache.ln2, &dh2);
        let mut ds = dx1.clone();
        apply_mask(&mut ds, &cache.attn_drop);
        let (dq, dkv) = self.attn.backward(&cache.attn, &ds);
        let dh1 = dq + dkv;
        let mut dx = dx1;
        dx += &self.ln1.backward(&cache.ln1, &dh1);
        dx
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.ln1.params_mut(&format!("{prefix}.ln1"), out);
        self.attn.params_mut(&format!("{prefix}.attn"), out);
        self.ln2.params_mut(&format!("{prefix}.ln2"), out);
        self.ffn.params_mut(&format!("{prefix}.ffn"), out);
    }
}

/// Pre-norm decoder layer: causal self-attention, cross-attention over the
/// encoder memory, then the feed-forward block.
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

pub struct DecoderLayerCache {
    ln_self: LayerNormCache,
    self_attn: AttentionCache,
    self_drop: Option<Array2<f64>>,
    ln_cross: LayerNormCache,
    pub cross_attn: AttentionCache,
    cross_drop: Option<Array2<f64>>,
    ln_ffn: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_drop: Option<Array2<f64>>,
}

impl DecoderLayer {
    pub fn new(rng: &mut ChaCha8Rng, std: f64, d: usize, n_heads: usize, ffn_width: usize) -> Self {
        DecoderLayer {
            ln_self: LayerNorm::new(d),
            self_attn: MultiHeadAttention::new(rng, std, d, n_heads),
            ln_cross: LayerNorm::new(d),
            cross_attn: MultiHeadAttention::new(rng, std, d, n_heads),
            ln_ffn: LayerNorm::new(d),
            ffn: FeedForward::new(rng, std, d, ffn_width),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        self_mask: &[bool],
        memory: &Array2<f64>,
        memory_mask: &[bool],
        drop: &mut DropoutCtx,
    ) -> (Array2<f64>, DecoderLayerCache) {
        let (h1, ln_self) = self.ln_self.forward(x);
        let (mut s_out, self_attn) = self.self_attn.forward(&h1, &h1, self_mask, true);
        let self_drop = drop.mask(s_out.nrows(), s_out.ncols());
        apply_mask(&mut s_out, &self_drop);
        let x1 = x + &s_out;

        let (h2, ln_cross) = self.ln_cross.forward(&x1);
        let (mut r_out, cross_attn) = self.cross_attn.forward(&h2, memory, memory_mask, false);
        let cross_drop = drop.mask(r_out.nrows(), r_out.ncols());
        apply_mask(&mut r_out, &cross_drop);
        let x2 = &x1 + &r_out;

        let (h3, ln_ffn) = self.ln_ffn.forward(&x2);
        let (mut f_out, ffn) = self.ffn.forward(&h3);
        let ffn_drop = drop.mask(f_out.nrows(), f_out.ncols());
        apply_mask(&mut f_out, &ffn_drop);
        let y = &x2 + &f_out;
        (
            y,
            DecoderLayerCache {
                ln_self,
                self_attn,
                self_drop,
                ln_cross,
                cross_attn,
                cross_drop,
                ln_ffn,
                ffn,
                ffn_drop,
            },
        )
    }

    /// Accumulates the memory gradient into `dmem` and returns dx.
    pub fn backward(
        &mut self,
        cache: &DecoderLayerCache,
        dy: &Array2<f64>,
        dmem: &mut Array2<f64>,
    ) -> Array2<f64> {
        let mut df = dy.clone();
        apply_mask(&mut df, &cache.ffn_drop);
        let dh3 = self.ffn.backward(&cache.ffn, &df);
        let mut dx2 = dy.clone();
        dx2 += &self.ln_ffn.backward(&cache.ln_ffn, &dh3);

        let mut dr = dx2.clone();
        apply_mask(&mut dr, &cache.cross_drop);
        let (dq, dkv) = self.cross_attn.backward(&cache.cross_attn, &dr);
        *dmem += &dkv;
        let mut dx1 = dx2;
        dx1 += &self.ln_cross.backward(&cache.ln_cross, &dq);

        let mut ds = dx1.clone();
        apply_mask(&mut ds, &cache.self_drop);
        let (dq2, dkv2) = self.self_attn.backward(&cache.self_attn, &ds);
        let dh1 = dq2 + dkv2;
        let mut dx = dx1;
        dx += &self.ln_self.backward(&cache.ln_self, &dh1);
        dx
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.ln_self.params_mut(&format!("{prefix}.ln_self"), out);
        self.self_attn.params_mut(&format!("{prefix}.self_attn"), out);
        self.ln_cross.params_mut(&format!("{prefix}.ln_cross"), out);
        self.cross_attn.params_mut(&format!("{prefix}.cross_attn"), out);
        self.ln_ffn.params_mut(&format!("{prefix}.ln_ffn"), out);
        self.ffn.params_mut(&format!("{prefix}.ffn"), out);
    }
}

//! ViT encoder: patch embedding, position tables, pre-norm transformer
//! blocks whose attention can extend over the previous chunk's keys and
//! values, pooling and the sigmoid head.
//!
//! The allocation-free path used by streaming is [`Encoder`]; the free
//! functions wrap it with owned inputs and outputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{ModelConfig, Pooling};
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::math;
use crate::weights::{LayerWeights, WeightSet};

/// Patch tokens, `n_tokens × dim`, row-major.
///
/// Patch `(f, t)` lives at row `t · n_freq + f` (plus one when a leading
/// cls row is present).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    tokens: Vec<f32>,
    dim: usize,
    n_freq: usize,
    n_time: usize,
    cls: bool,
}

impl TokenGrid {
    pub fn new(tokens: Vec<f32>, dim: usize, n_freq: usize, n_time: usize, cls: bool) -> Result<Self> {
        let n = n_freq * n_time + cls as usize;
        if tokens.len() != n * dim {
            return Err(Error::Shape {
                what: "token grid".into(),
                expected: alloc::format!("{n}x{dim}"),
                got: alloc::format!("{} values", tokens.len()),
            });
        }
        Ok(Self { tokens, dim, n_freq, n_time, cls })
    }

    pub fn tokens(&self) -> &[f32] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [f32] {
        &mut self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_freq_patches(&self) -> usize {
        self.n_freq
    }

    pub fn n_time_patches(&self) -> usize {
        self.n_time
    }

    pub fn has_cls(&self) -> bool {
        self.cls
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len() / self.dim
    }

    /// Row index of patch `(f, t)`.
    pub fn index(&self, f: usize, t: usize) -> usize {
        self.cls as usize + t * self.n_freq + f
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn patch(&self, f: usize, t: usize) -> &[f32] {
        self.token(self.index(f, t))
    }
}

/// Keys and values of one layer, `n_heads × len × head_dim` each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerKV {
    n_heads: usize,
    head_dim: usize,
    len: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
}

impl LayerKV {
    pub fn empty(n_heads: usize, head_dim: usize) -> Self {
        Self { n_heads, head_dim, len: 0, keys: Vec::new(), values: Vec::new() }
    }

    pub fn from_parts(n_heads: usize, head_dim: usize, keys: Vec<f32>, values: Vec<f32>) -> Result<Self> {
        let per = n_heads * head_dim;
        if per == 0 || keys.len() != values.len() || !keys.len().is_multiple_of(per) {
            return Err(Error::Shape {
                what: "layer cache".into(),
                expected: alloc::format!("keys and values of {n_heads}x?x{head_dim}"),
                got: alloc::format!("{} keys, {} values", keys.len(), values.len()),
            });
        }
        if keys.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer cache".into()));
        }
        Ok(Self { n_heads, head_dim, len: keys.len() / per, keys, values })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Key of context position `j` for head `h`.
    pub fn key(&self, h: usize, j: usize) -> &[f32] {
        let o = (h * self.len + j) * self.head_dim;
        &self.keys[o..o + self.head_dim]
    }

    pub fn value(&self, h: usize, j: usize) -> &[f32] {
        let o = (h * self.len + j) * self.head_dim;
        &self.values[o..o + self.head_dim]
    }

    pub fn clear(&mut self) {
        self.len = 0;
        self.keys.clear();
        self.values.clear();
    }

    /// Replaces the contents with token-major `k`/`v` (`len × n_heads·head_dim`),
    /// reusing the existing allocation.
    fn store_token_major(&mut self, k: &[f32], v: &[f32], len: usize) {
        let (h_n, dh) = (self.n_heads, self.head_dim);
        let d = h_n * dh;
        self.len = len;
        self.keys.clear();
        self.values.clear();
        for h in 0..h_n {
            for t in 0..len {
                self.keys.extend_from_slice(&k[t * d + h * dh..t * d + (h + 1) * dh]);
                self.values.extend_from_slice(&v[t * d + h * dh..t * d + (h + 1) * dh]);
            }
        }
    }
}

/// Receives every attention probability matrix as it is computed.
pub trait AttentionObserver {
    /// `probs` is `n_heads × n_query × context_len`, row-major.
    fn on_attention(&mut self, layer: usize, n_heads: usize, n_query: usize, context_len: usize, probs: &[f32]);
}

impl AttentionObserver for () {
    fn on_attention(&mut self, _: usize, _: usize, _: usize, _: usize, _: &[f32]) {}
}

/// Reusable activation buffers. Sized on first use and kept, so a stream of
/// equally sized chunks allocates nothing after its first chunk.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    x: Vec<f32>,
    normed: Vec<f32>,
    q: Vec<f32>,
    k_cur: Vec<f32>,
    v_cur: Vec<f32>,
    k_ctx: Vec<f32>,
    v_ctx: Vec<f32>,
    scores: Vec<f32>,
    merged: Vec<f32>,
    proj: Vec<f32>,
    hidden: Vec<f32>,
    patches: Vec<f32>,
    pooled: Vec<f32>,
}

fn resize(buf: &mut Vec<f32>, n: usize) {
    buf.clear();
    buf.resize(n, 0.0);
}

/// Inputs and outputs of one attention call, borrowed from a [`Workspace`].
struct AttnBuffers<'a> {
    q: &'a mut Vec<f32>,
    k_cur: &'a mut Vec<f32>,
    v_cur: &'a mut Vec<f32>,
    k_ctx: &'a mut Vec<f32>,
    v_ctx: &'a mut Vec<f32>,
    scores: &'a mut Vec<f32>,
    merged: &'a mut Vec<f32>,
}

/// Multi-head attention of `x` (`n × d`) over `[cache ∥ current]`.
///
/// Writes the projected output into `out` and replaces `cache` with the
/// current tokens' keys and values.
#[allow(clippy::too_many_arguments)]
fn attention_into(
    x: &[f32],
    n: usize,
    layer_idx: usize,
    lw: &LayerWeights,
    cfg: &ModelConfig,
    cache: &mut LayerKV,
    buf: AttnBuffers<'_>,
    out: &mut [f32],
    obs: &mut dyn AttentionObserver,
) {
    let d = cfg.embed_dim;
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let past = cache.len;
    let ctx = past + n;
    debug_assert!(past == 0 || (cache.n_heads == n_heads && cache.head_dim == dh));

    resize(buf.q, n * d);
    resize(buf.k_cur, n * d);
    resize(buf.v_cur, n * d);
    math::linear(x, n, d, lw.wq.data(), lw.bq.data(), buf.q);
    math::linear(x, n, d, lw.wk.data(), lw.bk.data(), buf.k_cur);
    math::linear(x, n, d, lw.wv.data(), lw.bv.data(), buf.v_cur);

    // Explicit concatenation along the context axis, head-major.
    resize(buf.k_ctx, n_heads * ctx * dh);
    resize(buf.v_ctx, n_heads * ctx * dh);
    for h in 0..n_heads {
        let base = h * ctx * dh;
        if past > 0 {
            let src = h * past * dh..(h + 1) * past * dh;
            buf.k_ctx[base..base + past * dh].copy_from_slice(&cache.keys[src.clone()]);
            buf.v_ctx[base..base + past * dh].copy_from_slice(&cache.values[src]);
        }
        for t in 0..n {
            let dst = base + (past + t) * dh;
            let src = t * d + h * dh;
            buf.k_ctx[dst..dst + dh].copy_from_slice(&buf.k_cur[src..src + dh]);
            buf.v_ctx[dst..dst + dh].copy_from_slice(&buf.v_cur[src..src + dh]);
        }
    }

    let scale = 1.0 / math::sqrtf(dh as f32);
    resize(buf.scores, n_heads * n * ctx);
    for h in 0..n_heads {
        let keys = &buf.k_ctx[h * ctx * dh..(h + 1) * ctx * dh];
        for i in 0..n {
            let qi = &buf.q[i * d + h * dh..i * d + (h + 1) * dh];
            let row = &mut buf.scores[(h * n + i) * ctx..(h * n + i + 1) * ctx];
            for (s, kj) in row.iter_mut().zip(keys.chunks_exact(dh)) {
                *s = math::dot(qi, kj) * scale;
            }
            math::softmax_in_place(row);
        }
    }
    obs.on_attention(layer_idx, n_heads, n, ctx, buf.scores);

    resize(buf.merged, n * d);
    for h in 0..n_heads {
        let values = &buf.v_ctx[h * ctx * dh..(h + 1) * ctx * dh];
        for i in 0..n {
            let row = &buf.scores[(h * n + i) * ctx..(h * n + i + 1) * ctx];
            let acc = &mut buf.merged[i * d + h * dh..i * d + (h + 1) * dh];
            for (&p, vj) in row.iter().zip(values.chunks_exact(dh)) {
                for (a, &v) in acc.iter_mut().zip(vj) {
                    *a += p * v;
                }
            }
        }
    }
    math::linear(buf.merged, n, d, lw.wo.data(), lw.bo.data(), out);

    if cache.n_heads != n_heads || cache.head_dim != dh {
        *cache = LayerKV::empty(n_heads, dh);
    }
    cache.store_token_major(buf.k_cur, buf.v_cur, n);
}

impl Workspace {
    fn attn_buffers(&mut self) -> (AttnBuffers<'_>, &mut Vec<f32>, &mut Vec<f32>) {
        (
            AttnBuffers {
                q: &mut self.q,
                k_cur: &mut self.k_cur,
                v_cur: &mut self.v_cur,
                k_ctx: &mut self.k_ctx,
                v_ctx: &mut self.v_ctx,
                scores: &mut self.scores,
                merged: &mut self.merged,
            },
            &mut self.normed,
            &mut self.proj,
        )
    }
}

/// Pre-norm block on `x` in place: `x += Attn(LN1 x)`, then `x += MLP(LN2 x)`.
fn block_in_place(
    x: &mut [f32],
    n: usize,
    layer_idx: usize,
    w: &WeightSet,
    cache: &mut LayerKV,
    ws: &mut Workspace,
    obs: &mut dyn AttentionObserver,
) {
    let cfg = &w.config;
    let d = cfg.embed_dim;
    let lw = &w.layers[layer_idx];
    let eps = cfg.layer_norm_eps;

    let (buf, normed, proj) = ws.attn_buffers();
    resize(normed, n * d);
    resize(proj, n * d);
    math::layer_norm(x, lw.norm1_weight.data(), lw.norm1_bias.data(), eps, normed);
    attention_into(normed, n, layer_idx, lw, cfg, cache, buf, proj, obs);
    for (xi, &a) in x.iter_mut().zip(ws.proj.iter()) {
        *xi += a;
    }

    math::layer_norm(x, lw.norm2_weight.data(), lw.norm2_bias.data(), eps, &mut ws.normed);
    resize(&mut ws.hidden, n * cfg.mlp_dim());
    math::linear(&ws.normed, n, d, lw.fc1_weight.data(), lw.fc1_bias.data(), &mut ws.hidden);
    for v in ws.hidden.iter_mut() {
        *v = math::gelu(*v);
    }
    math::linear(&ws.hidden, n, cfg.mlp_dim(), lw.fc2_weight.data(), lw.fc2_bias.data(), &mut ws.proj);
    for (xi, &a) in x.iter_mut().zip(ws.proj.iter()) {
        *xi += a;
    }
}

fn check_mel(mel: &MelSpectrogram, cfg: &ModelConfig) -> Result<usize> {
    if mel.n_mels() != cfg.n_mels {
        return Err(Error::Shape {
            what: "spectrogram rows".into(),
            expected: alloc::format!("{}", cfg.n_mels),
            got: alloc::format!("{}", mel.n_mels()),
        });
    }
    let n_time = mel.n_frames() / cfg.patch_size;
    if n_time == 0 {
        return Err(Error::TooFewFrames { have: mel.n_frames(), need: cfg.patch_size });
    }
    Ok(n_time)
}

/// Patch embedding into `out`; trailing frames short of a full patch are dropped.
fn patchify_into(mel: &MelSpectrogram, w: &WeightSet, patches: &mut Vec<f32>, out: &mut [f32], row0: usize) -> Result<usize> {
    let cfg = &w.config;
    let n_time = check_mel(mel, cfg)?;
    let p = cfg.patch_size;
    let n_freq = cfg.n_freq_patches();
    let d = cfg.embed_dim;
    let n = n_freq * n_time;

    // im2col: one P·P row per patch, kernel-row (frequency) major.
    resize(patches, n * p * p);
    for t in 0..n_time {
        for f in 0..n_freq {
            let dst = &mut patches[(t * n_freq + f) * p * p..(t * n_freq + f + 1) * p * p];
            for i in 0..p {
                let src = &mel.row(f * p + i)[t * p..t * p + p];
                dst[i * p..(i + 1) * p].copy_from_slice(src);
            }
        }
    }
    let kernel = w.patch_weight.data();
    let bias = w.patch_bias.data();
    for (r, patch) in patches.chunks_exact(p * p).enumerate() {
        let tok = &mut out[(row0 + r) * d..(row0 + r + 1) * d];
        for (o, v) in tok.iter_mut().enumerate() {
            *v = bias[o] + math::dot(patch, &kernel[o * p * p..(o + 1) * p * p]);
        }
    }
    Ok(n_time)
}

fn add_pos_into(tokens: &mut [f32], row0: usize, n_time: usize, w: &WeightSet) -> Result<()> {
    let cfg = &w.config;
    if n_time > cfg.max_time_patches {
        return Err(Error::PositionOverflow { have: n_time, max: cfg.max_time_patches });
    }
    let d = cfg.embed_dim;
    let n_freq = cfg.n_freq_patches();
    for t in 0..n_time {
        let tp = &w.time_pos.data()[t * d..(t + 1) * d];
        for f in 0..n_freq {
            let fp = &w.freq_pos.data()[f * d..(f + 1) * d];
            let row = row0 + t * n_freq + f;
            for ((v, &a), &b) in tokens[row * d..(row + 1) * d].iter_mut().zip(tp).zip(fp) {
                *v += a + b;
            }
        }
    }
    Ok(())
}

/// Final norm, pooling and head; logits written to `logits`.
fn head_into(x: &[f32], n: usize, w: &WeightSet, ws: &mut Workspace, logits: &mut Vec<f32>) {
    let cfg = &w.config;
    let d = cfg.embed_dim;
    resize(&mut ws.normed, n * d);
    math::layer_norm(x, w.norm_weight.data(), w.norm_bias.data(), cfg.layer_norm_eps, &mut ws.normed);
    resize(&mut ws.pooled, d);
    match cfg.pooling {
        Pooling::Cls => ws.pooled.copy_from_slice(&ws.normed[..d]),
        Pooling::Mean => {
            for row in ws.normed.chunks_exact(d) {
                for (p, &v) in ws.pooled.iter_mut().zip(row) {
                    *p += v;
                }
            }
            let inv = 1.0 / n as f32;
            for p in ws.pooled.iter_mut() {
                *p *= inv;
            }
        }
    }
    logits.clear();
    logits.resize(cfg.n_classes, 0.0);
    math::linear(&ws.pooled, 1, d, w.head_weight.data(), w.head_bias.data(), logits);
}

/// Forward pass over one spectrogram chunk with reusable buffers.
#[derive(Debug, Clone, Default)]
pub struct Encoder {
    ws: Workspace,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs normalizer, patch embedding, all blocks, head. `caches` must hold
    /// one entry per layer; each is read as the previous chunk's context and
    /// then replaced by this chunk's keys and values. Returns logits.
    pub fn forward_logits(
        &mut self,
        w: &WeightSet,
        mel: &MelSpectrogram,
        caches: &mut [LayerKV],
        obs: &mut dyn AttentionObserver,
    ) -> Result<Vec<f32>> {
        let cfg = &w.config;
        assert_eq!(caches.len(), cfg.n_layers, "one cache per layer");
        let n_time = check_mel(mel, cfg)?;
        if n_time > cfg.max_time_patches {
            return Err(Error::PositionOverflow { have: n_time, max: cfg.max_time_patches });
        }
        if mel.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input spectrogram".into()));
        }
        let d = cfg.embed_dim;
        let cls = cfg.pooling == Pooling::Cls;
        let row0 = cls as usize;
        let n = row0 + cfg.n_freq_patches() * n_time;

        let normed_mel;
        let mel = match &w.normalizer {
            Some(p) => {
                let mut m = mel.clone();
                p.apply(&mut m);
                normed_mel = m;
                &normed_mel
            }
            None => mel,
        };

        let mut x = core::mem::take(&mut self.ws.x);
        resize(&mut x, n * d);
        patchify_into(mel, w, &mut self.ws.patches, &mut x, row0)?;
        add_pos_into(&mut x, row0, n_time, w)?;
        if let Some(c) = &w.cls_token {
            x[..d].copy_from_slice(c.data());
        }
        for (l, cache) in caches.iter_mut().enumerate() {
            block_in_place(&mut x, n, l, w, cache, &mut self.ws, obs);
        }
        let mut logits = Vec::new();
        head_into(&x, n, w, &mut self.ws, &mut logits);
        self.ws.x = x;
        Ok(logits)
    }

    /// As [`Self::forward_logits`], returning per-class sigmoid probabilities.
    pub fn forward(
        &mut self,
        w: &WeightSet,
        mel: &MelSpectrogram,
        caches: &mut [LayerKV],
        obs: &mut dyn AttentionObserver,
    ) -> Result<Vec<f32>> {
        let mut scores = self.forward_logits(w, mel, caches, obs)?;
        for s in scores.iter_mut() {
            *s = math::sigmoid(*s);
        }
        Ok(scores)
    }
}

/// Empty per-layer caches for `cfg`.
pub fn empty_caches(cfg: &ModelConfig) -> Vec<LayerKV> {
    vec![LayerKV::empty(cfg.n_heads, cfg.head_dim()); cfg.n_layers]
}

/// Patch embedding of `mel` (no normalizer, no positions).
pub fn patchify(mel: &MelSpectrogram, w: &WeightSet) -> Result<TokenGrid> {
    let cfg = &w.config;
    let n_time = check_mel(mel, cfg)?;
    let n_freq = cfg.n_freq_patches();
    let mut tokens = vec![0.0; n_freq * n_time * cfg.embed_dim];
    patchify_into(mel, w, &mut Vec::new(), &mut tokens, 0)?;
    TokenGrid::new(tokens, cfg.embed_dim, n_freq, n_time, false)
}

/// Adds `time_pos[t] + freq_pos[f]` to every patch token; positions are
/// local to the grid.
pub fn add_pos_embed(grid: &TokenGrid, w: &WeightSet) -> Result<TokenGrid> {
    let mut out = grid.clone();
    let row0 = grid.cls as usize;
    add_pos_into(&mut out.tokens, row0, grid.n_time, w)?;
    Ok(out)
}

fn check_grid(x: &TokenGrid, cfg: &ModelConfig) -> Result<()> {
    if x.dim != cfg.embed_dim {
        return Err(Error::Shape {
            what: "token dim".into(),
            expected: alloc::format!("{}", cfg.embed_dim),
            got: alloc::format!("{}", x.dim),
        });
    }
    if x.tokens.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tokens".into()));
    }
    Ok(())
}

fn check_cache(cache: &LayerKV, cfg: &ModelConfig) -> Result<()> {
    if !cache.is_empty() && (cache.n_heads != cfg.n_heads || cache.head_dim != cfg.head_dim()) {
        return Err(Error::Shape {
            what: "layer cache".into(),
            expected: alloc::format!("{} heads of dim {}", cfg.n_heads, cfg.head_dim()),
            got: alloc::format!("{} heads of dim {}", cache.n_heads, cache.head_dim),
        });
    }
    Ok(())
}

/// Self-attention of layer `layer` on `x` (no layer norm, no residual),
/// optionally extended over `cache`. Returns the output tokens and the
/// current tokens' keys and values.
pub fn attention(x: &TokenGrid, layer: usize, w: &WeightSet, cache: Option<&LayerKV>) -> Result<(TokenGrid, LayerKV)> {
    attention_observed(x, layer, w, cache, &mut ())
}

pub fn attention_observed(
    x: &TokenGrid,
    layer: usize,
    w: &WeightSet,
    cache: Option<&LayerKV>,
    obs: &mut dyn AttentionObserver,
) -> Result<(TokenGrid, LayerKV)> {
    let cfg = &w.config;
    check_grid(x, cfg)?;
    let mut kv = match cache {
        Some(c) => {
            check_cache(c, cfg)?;
            c.clone()
        }
        None => LayerKV::empty(cfg.n_heads, cfg.head_dim()),
    };
    let n = x.n_tokens();
    let mut ws = Workspace::default();
    let mut out = vec![0.0; n * cfg.embed_dim];
    let (buf, _, _) = ws.attn_buffers();
    attention_into(&x.tokens, n, layer, &w.layers[layer], cfg, &mut kv, buf, &mut out, obs);
    Ok((TokenGrid { tokens: out, ..x.clone() }, kv))
}

/// One pre-norm transformer block.
pub fn transformer_block(x: &TokenGrid, layer: usize, w: &WeightSet, cache: Option<&LayerKV>) -> Result<(TokenGrid, LayerKV)> {
    let cfg = &w.config;
    check_grid(x, cfg)?;
    let mut kv = match cache {
        Some(c) => {
            check_cache(c, cfg)?;
            c.clone()
        }
        None => LayerKV::empty(cfg.n_heads, cfg.head_dim()),
    };
    let mut out = x.clone();
    let n = x.n_tokens();
    block_in_place(&mut out.tokens, n, layer, w, &mut kv, &mut Workspace::default(), &mut ());
    Ok((out, kv))
}

/// Final norm, pooling, head and sigmoid.
pub fn classify(grid: &TokenGrid, w: &WeightSet) -> Result<Vec<f32>> {
    let cfg = &w.config;
    check_grid(grid, cfg)?;
    if cfg.pooling == Pooling::Cls && !grid.cls {
        return Err(Error::Config("cls pooling needs a grid with a cls row".into()));
    }
    let mut logits = Vec::new();
    head_into(&grid.tokens, grid.n_tokens(), w, &mut Workspace::default(), &mut logits);
    Ok(logits.into_iter().map(math::sigmoid).collect())
}

/// Scores for a whole spectrogram as one chunk, without history.
pub fn forward(w: &WeightSet, mel: &MelSpectrogram) -> Result<Vec<f32>> {
    let mut caches = empty_caches(&w.config);
    Encoder::new().forward(w, mel, &mut caches, &mut ())
}

/// Number of tokens the encoder sees for `n_frames` mel frames.
pub fn token_count(cfg: &ModelConfig, n_frames: usize) -> usize {
    cfg.n_freq_patches() * (n_frames / cfg.patch_size) + (cfg.pooling == Pooling::Cls) as usize
}

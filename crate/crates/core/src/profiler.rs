//! Analytic flops and activation-memory model of one encoder forward pass.
//!
//! Flops are `2 · multiply-adds`. Two counts are kept:
//!
//! * [`estimate_flops`] counts every matrix product, including the
//!   parameter-free `QKᵀ` and `PV` products whose cost grows with the
//!   attention context.
//! * [`estimate_layer_flops`] counts only layers that carry weights (patch
//!   convolution, projections, MLP, head), which is what module-hook
//!   profilers report.
//!
//! Memory is counted in `f32` bytes, parameters excluded.

use crate::config::ModelConfig;

const F32_BYTES: u64 = 4;

/// Cost of one forward pass over `n_tokens` with `cache_len` cached tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub config: ModelConfig,
    pub n_tokens: usize,
    pub cache_len: usize,
    /// `n_tokens + cache_len`.
    pub context_length: usize,
    pub flops: u64,
    pub layer_flops: u64,
    /// Largest per-layer working set plus cache, as this engine runs.
    pub peak_activation_bytes: u64,
    /// Every layer's activations kept alive at once, plus cache.
    pub retained_activation_bytes: u64,
    pub cache_bytes: u64,
}

impl CostReport {
    pub fn new(cfg: &ModelConfig, n_tokens: usize, cache_len: usize) -> Self {
        Self {
            config: *cfg,
            n_tokens,
            cache_len,
            context_length: n_tokens + cache_len,
            flops: estimate_flops(cfg, n_tokens, cache_len),
            layer_flops: estimate_layer_flops(cfg, n_tokens, cache_len),
            peak_activation_bytes: estimate_peak_memory(cfg, n_tokens, cache_len),
            retained_activation_bytes: estimate_retained_memory(cfg, n_tokens, cache_len),
            cache_bytes: cache_bytes(cfg, cache_len),
        }
    }

    pub fn gflops(&self) -> f64 {
        self.layer_flops as f64 / 1e9
    }

    pub fn gflops_all_matmuls(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

/// Patch-embedding convolution plus classifier head.
fn stem_and_head_flops(cfg: &ModelConfig, n: u64) -> u64 {
    let d = cfg.embed_dim as u64;
    let p = cfg.patch_size as u64;
    2 * n * d * p * p + 2 * d * cfg.n_classes as u64
}

/// Per layer: `Q,K,V,O` projections `8·N·d²`, scores and weighted sum
/// `4·N·(N+T_c)·d`, MLP `16·N·d²` (ratio 4); plus patch embedding and head.
pub fn estimate_flops(cfg: &ModelConfig, n_tokens: usize, cache_len: usize) -> u64 {
    let n = n_tokens as u64;
    let ctx = (n_tokens + cache_len) as u64;
    let d = cfg.embed_dim as u64;
    let r = cfg.mlp_ratio as u64;
    let per_layer = 8 * n * d * d + 4 * n * ctx * d + 4 * r * n * d * d;
    cfg.n_layers as u64 * per_layer + stem_and_head_flops(cfg, n)
}

/// Weighted layers only: projections, MLP, patch embedding and head.
/// Independent of the cache length.
pub fn estimate_layer_flops(cfg: &ModelConfig, n_tokens: usize, _cache_len: usize) -> u64 {
    let n = n_tokens as u64;
    let d = cfg.embed_dim as u64;
    let r = cfg.mlp_ratio as u64;
    cfg.n_layers as u64 * (8 * n * d * d + 4 * r * n * d * d) + stem_and_head_flops(cfg, n)
}

/// Cached keys and values for every layer.
pub fn cache_bytes(cfg: &ModelConfig, cache_len: usize) -> u64 {
    cfg.n_layers as u64 * 2 * cache_len as u64 * cfg.embed_dim as u64 * F32_BYTES
}

/// Floats live inside one block: token buffer, `Q/K/V`, the
/// `heads × N × (N+T_c)` attention matrix and the MLP hidden layer.
fn layer_working_set(cfg: &ModelConfig, n_tokens: usize, cache_len: usize) -> u64 {
    let n = n_tokens as u64;
    let d = cfg.embed_dim as u64;
    let ctx = (n_tokens + cache_len) as u64;
    n * d + 3 * n * d + cfg.n_heads as u64 * n * ctx + cfg.mlp_ratio as u64 * n * d
}

/// Peak bytes when buffers are reused across layers (the max over layers of
/// the block working set) plus the cache.
pub fn estimate_peak_memory(cfg: &ModelConfig, n_tokens: usize, cache_len: usize) -> u64 {
    layer_working_set(cfg, n_tokens, cache_len) * F32_BYTES + cache_bytes(cfg, cache_len)
}

/// Peak bytes when every layer's working set stays allocated until the end
/// of the pass, plus the cache.
pub fn estimate_retained_memory(cfg: &ModelConfig, n_tokens: usize, cache_len: usize) -> u64 {
    cfg.n_layers as u64 * layer_working_set(cfg, n_tokens, cache_len) * F32_BYTES + cache_bytes(cfg, cache_len)
}

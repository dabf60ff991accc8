//! Naive f64 re-implementation of the encoder used as a test oracle.
//!
//! Shares nothing with the engine's kernels: plain nested loops, f64
//! accumulation, token-major storage and an explicit `[previous ∥ current]`
//! concatenation of keys and values.
#![allow(dead_code)]

use sat_core::config::Pooling;
use sat_core::{MelSpectrogram, WeightSet};

pub type Mat = Vec<Vec<f64>>;

/// Keys and values of one layer for one chunk, token-major (`T × d`).
#[derive(Clone, Debug, Default)]
pub struct RefKV {
    pub keys: Mat,
    pub values: Mat,
}

fn f(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn matmul(x: &Mat, w: &[f32], b: &[f32]) -> Mat {
    let out_dim = b.len();
    let in_dim = w.len() / out_dim;
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), in_dim);
            (0..out_dim)
                .map(|j| {
                    let mut acc = b[j] as f64;
                    for k in 0..in_dim {
                        acc += row[k] * w[k * out_dim + j] as f64;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm(x: &Mat, g: &[f32], b: &[f32], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + eps).sqrt() * g[i] as f64 + b[i] as f64)
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Normalized spectrogram patches embedded, positions added, cls prepended.
pub fn embed(w: &WeightSet, mel: &MelSpectrogram) -> Mat {
    let cfg = &w.config;
    let (p, d) = (cfg.patch_size, cfg.embed_dim);
    let n_freq = cfg.n_mels / p;
    let n_time = mel.n_frames() / p;
    let norm = w.normalizer_or_identity();
    let s = |m: usize, t: usize| -> f64 {
        (norm.gamma[m] as f64) * (mel.get(m, t) as f64 - norm.mean[m] as f64)
            / ((norm.var[m] + norm.eps) as f64).sqrt()
            + norm.beta[m] as f64
    };
    let kernel = w.patch_weight.data();
    let mut tokens = Vec::new();
    if cfg.pooling == Pooling::Cls {
        tokens.push(f(w.cls_token.as_ref().unwrap().data()));
    }
    for t in 0..n_time {
        for fq in 0..n_freq {
            let mut tok = vec![0.0; d];
            for (o, v) in tok.iter_mut().enumerate() {
                let mut acc = w.patch_bias.data()[o] as f64;
                for i in 0..p {
                    for j in 0..p {
                        acc += kernel[((o * p) + i) * p + j] as f64 * s(fq * p + i, t * p + j);
                    }
                }
                *v = acc + w.time_pos.data()[t * d + o] as f64 + w.freq_pos.data()[fq * d + o] as f64;
            }
            tokens.push(tok);
        }
    }
    tokens
}

/// Attention of `x` over `[prev ∥ current]`; returns output, current K/V and
/// the probability rows (`heads × N × ctx`).
pub fn attention(x: &Mat, layer: usize, w: &WeightSet, prev: Option<&RefKV>) -> (Mat, RefKV, Vec<Vec<Vec<f64>>>) {
    let cfg = &w.config;
    let lw = &w.layers[layer];
    let (d, heads) = (cfg.embed_dim, cfg.n_heads);
    let dh = d / heads;
    let q = matmul(x, lw.wq.data(), lw.bq.data());
    let k = matmul(x, lw.wk.data(), lw.bk.data());
    let v = matmul(x, lw.wv.data(), lw.bv.data());

    let mut k_all: Mat = prev.map(|p| p.keys.clone()).unwrap_or_default();
    let mut v_all: Mat = prev.map(|p| p.values.clone()).unwrap_or_default();
    k_all.extend(k.iter().cloned());
    v_all.extend(v.iter().cloned());

    let mut merged = vec![vec![0.0; d]; x.len()];
    let mut probs = vec![vec![]; heads];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<f64> = k_all
                .iter()
                .map(|kj| qi[r.clone()].iter().zip(&kj[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / z).collect();
            for (pj, vj) in p.iter().zip(&v_all) {
                for c in r.clone() {
                    merged[i][c] += pj * vj[c];
                }
            }
            probs[h].push(p);
        }
    }
    let out = matmul(&merged, lw.wo.data(), lw.bo.data());
    (out, RefKV { keys: k, values: v }, probs)
}

pub fn block(x: &Mat, layer: usize, w: &WeightSet, prev: Option<&RefKV>) -> (Mat, RefKV) {
    let lw = &w.layers[layer];
    let eps = w.config.layer_norm_eps as f64;
    let ln1 = layer_norm(x, lw.norm1_weight.data(), lw.norm1_bias.data(), eps);
    let (a, kv, _) = attention(&ln1, layer, w, prev);
    let h: Mat = x.iter().zip(&a).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect()).collect();
    let ln2 = layer_norm(&h, lw.norm2_weight.data(), lw.norm2_bias.data(), eps);
    let mut hidden = matmul(&ln2, lw.fc1_weight.data(), lw.fc1_bias.data());
    for row in hidden.iter_mut() {
        for v in row.iter_mut() {
            *v = gelu(*v);
        }
    }
    let m = matmul(&hidden, lw.fc2_weight.data(), lw.fc2_bias.data());
    let out = h.iter().zip(&m).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect()).collect();
    (out, kv)
}

pub fn logits(x: &Mat, w: &WeightSet) -> Vec<f64> {
    let cfg = &w.config;
    let normed = layer_norm(x, w.norm_weight.data(), w.norm_bias.data(), cfg.layer_norm_eps as f64);
    let pooled: Vec<f64> = match cfg.pooling {
        Pooling::Cls => normed[0].clone(),
        Pooling::Mean => (0..cfg.embed_dim)
            .map(|c| normed.iter().map(|r| r[c]).sum::<f64>() / normed.len() as f64)
            .collect(),
    };
    matmul(&vec![pooled], w.head_weight.data(), w.head_bias.data()).remove(0)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scores for each chunk in order, each chunk attending to the previous
/// chunk's keys and values (none for the first).
pub fn stream_scores(w: &WeightSet, chunks: &[MelSpectrogram]) -> Vec<Vec<f64>> {
    let mut prev: Vec<Option<RefKV>> = vec![None; w.config.n_layers];
    chunks
        .iter()
        .map(|mel| {
            let mut x = embed(w, mel);
            for (l, slot) in prev.iter_mut().enumerate() {
                let (y, kv) = block(&x, l, w, slot.as_ref());
                x = y;
                *slot = Some(kv);
            }
            logits(&x, w).into_iter().map(sigmoid).collect()
        })
        .collect()
}

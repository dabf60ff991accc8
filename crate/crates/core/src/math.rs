//! Dense kernels shared by the frontend and the encoder.
//!
//! Matrices are row-major `f32` slices. Linear weights are stored
//! `[in, out]` so that `y = x · W + b`.

/// Rows of `x` processed together so each weight row is loaded once per block.
const ROW_BLOCK: usize = 4;

#[inline]
pub fn expf(x: f32) -> f32 {
    libm::expf(x)
}

#[inline]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::expf(-x))
    } else {
        let e = libm::expf(x);
        e / (1.0 + e)
    }
}

/// Exact (erf based) GELU.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * core::f32::consts::FRAC_1_SQRT_2))
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[n, :] = x[n, :] · w + bias` for `n` in `0..rows`.
pub fn linear(x: &[f32], rows: usize, in_dim: usize, w: &[f32], bias: &[f32], out: &mut [f32]) {
    let out_dim = bias.len();
    debug_assert_eq!(x.len(), rows * in_dim);
    debug_assert_eq!(w.len(), in_dim * out_dim);
    debug_assert_eq!(out.len(), rows * out_dim);

    for (x_blk, out_blk) in x
        .chunks(ROW_BLOCK * in_dim)
        .zip(out.chunks_mut(ROW_BLOCK * out_dim))
    {
        for row in out_blk.chunks_mut(out_dim) {
            row.copy_from_slice(bias);
        }
        let blk_rows = x_blk.len() / in_dim;
        if blk_rows == ROW_BLOCK {
            let (o0, rest) = out_blk.split_at_mut(out_dim);
            let (o1, rest) = rest.split_at_mut(out_dim);
            let (o2, o3) = rest.split_at_mut(out_dim);
            for (k, w_row) in w.chunks_exact(out_dim).enumerate() {
                let a0 = x_blk[k];
                let a1 = x_blk[in_dim + k];
                let a2 = x_blk[2 * in_dim + k];
                let a3 = x_blk[3 * in_dim + k];
                for (j, &wv) in w_row.iter().enumerate() {
                    o0[j] += a0 * wv;
                    o1[j] += a1 * wv;
                    o2[j] += a2 * wv;
                    o3[j] += a3 * wv;
                }
            }
        } else {
            for (x_row, o_row) in x_blk.chunks(in_dim).zip(out_blk.chunks_mut(out_dim)) {
                for (&a, w_row) in x_row.iter().zip(w.chunks_exact(out_dim)) {
                    axpy(a, w_row, o_row);
                }
            }
        }
    }
}

/// Per-row layer normalization with affine `gamma`/`beta`.
pub fn layer_norm(x: &[f32], gamma: &[f32], beta: &[f32], eps: f32, out: &mut [f32]) {
    let d = gamma.len();
    debug_assert_eq!(x.len(), out.len());
    for (x_row, o_row) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = x_row.iter().sum::<f32>() / d as f32;
        let var = x_row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / sqrtf(var + eps);
        for (((o, &v), &g), &b) in o_row.iter_mut().zip(x_row).zip(gamma).zip(beta) {
            *o = (v - mean) * inv * g + b;
        }
    }
}

/// Numerically stable softmax over one row, in place.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = expf(*v - max);
        sum += *v as f64;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v = (*v as f64 * inv) as f32;
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight lanes keep the reduction vectorizable without fast-math.
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    acc.iter().sum::<f32>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_linear(x: &[f32], rows: usize, in_dim: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
        let out_dim = b.len();
        let mut out = vec![0.0f64; rows * out_dim];
        for n in 0..rows {
            for j in 0..out_dim {
                let mut acc = b[j] as f64;
                for k in 0..in_dim {
                    acc += x[n * in_dim + k] as f64 * w[k * out_dim + j] as f64;
                }
                out[n * out_dim + j] = acc;
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    #[test]
    fn linear_matches_naive_for_ragged_row_counts() {
        let mut rng = crate::rng::SplitMix64::new(7);
        for rows in [1usize, 3, 4, 5, 9] {
            let (i, o) = (13, 11);
            let x: Vec<f32> = (0..rows * i).map(|_| rng.next_uniform() as f32 - 0.5).collect();
            let w: Vec<f32> = (0..i * o).map(|_| rng.next_uniform() as f32 - 0.5).collect();
            let b: Vec<f32> = (0..o).map(|_| rng.next_uniform() as f32).collect();
            let mut out = vec![0.0; rows * o];
            linear(&x, rows, i, &w, &b, &mut out);
            let want = naive_linear(&x, rows, i, &w, &b);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_survive_large_logits() {
        let mut row = [1000.0, 999.0, -1000.0];
        softmax_in_place(&mut row);
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|v| v.is_finite()));
        let mut single = [3.5];
        softmax_in_place(&mut single);
        assert_eq!(single[0], 1.0);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let x: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin() * 5.0 + 2.0).collect();
        let g = vec![1.0; 64];
        let b = vec![0.0; 64];
        let mut out = vec![0.0; 64];
        layer_norm(&x, &g, &b, 1e-6, &mut out);
        let mean = out.iter().sum::<f32>() / 64.0;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 64.0;
        assert!(mean.abs() <= 1e-5);
        assert!((var - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(20.0) >= 1.0 - 1e-8);
        assert!(sigmoid(-200.0) >= 0.0 && sigmoid(-200.0) < 1e-30);
        assert!((gelu(0.0)).abs() < 1e-12);
        assert!((gelu(10.0) - 10.0).abs() < 1e-5);
    }
}

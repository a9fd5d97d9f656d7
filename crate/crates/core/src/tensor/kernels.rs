//! Slice-level numeric kernels shared by the graph's forward and backward
//! passes. All matrices are row-major.

/// `out[m x n] += a[m x k] * b[k x n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// `out[m x k] += g[m x n] * b[k x n]^T`
pub fn matmul_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] += dot(g_row, b_row);
        }
    }
}

/// `out[k x n] += a[m x k]^T * g[m x n]`
pub fn matmul_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += a_ip * gv;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the loop vectorize; the summation
    // order is fixed so results stay bitwise reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Softmax over one row restricted to keys where `masked[j]` is false.
/// Masked entries are written as exactly zero.
pub fn masked_softmax_row(logits: &[f64], masked: &[bool], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (&l, &m) in logits.iter().zip(masked) {
        if !m && l > max {
            max = l;
        }
    }
    let mut total = 0.0;
    for ((o, &l), &m) in out.iter_mut().zip(logits).zip(masked) {
        if m {
            *o = 0.0;
        } else {
            let e = (l - max).exp();
            *o = e;
            total += e;
        }
    }
    let inv = 1.0 / total;
    for (o, &m) in out.iter_mut().zip(masked) {
        if !m {
            *o *= inv;
        }
    }
}

/// Layer-normalizes one row into `xhat` and returns `1 / sqrt(var + eps)`.
pub fn layer_norm_row(x: &[f64], eps: f64, xhat: &mut [f64]) -> f64 {
    let c = x.len() as f64;
    let mean = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    let inv_std = 1.0 / (var + eps).sqrt();
    for (h, &v) in xhat.iter_mut().zip(x) {
        *h = (v - mean) * inv_std;
    }
    inv_std
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -1.0, -0.2, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5]; // 2x3 (b^T)
        let mut via_bt = [0.0; 4];
        matmul_bt_acc(&a, &bt, &mut via_bt, 2, 2, 3);
        let b = [1.0, 2.0, 0.0, 1.0, -1.0, 0.5]; // 3x2
        let mut direct = [0.0; 4];
        matmul_acc(&a, &b, &mut direct, 2, 3, 2);
        assert_eq!(via_bt, direct);

        let mut at = [0.0; 9];
        matmul_at_acc(&a, &a, &mut at, 2, 3, 3);
        // a^T a, entry (0,0) = 1 + 16
        assert_eq!(at[0], 17.0);
        assert_eq!(at[8], 45.0);
    }
}

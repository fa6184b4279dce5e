//! Forward kernels shared by the tape and by cache-based inference code.
//! Keeping one implementation per operation is what makes "training forward
//! == inference forward" testable rather than aspirational.

use crate::Real;
use ndarray::{ArrayView2, ArrayViewMut2};

/// `out = a (m x k) * b (k x n)`, accumulating into `out` scaled by `beta`.
/// Row-major slices; delegates to ndarray's matmul which is bit-deterministic
/// on a given machine.
pub fn matmul_into<R: Real>(
    a: &[R],
    b: &[R],
    out: &mut [R],
    m: usize,
    k: usize,
    n: usize,
    beta: R,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let av = ArrayView2::from_shape((m, k), a).expect("matmul lhs shape");
    let bv = ArrayView2::from_shape((k, n), b).expect("matmul rhs shape");
    let mut cv = ArrayViewMut2::from_shape((m, n), out).expect("matmul out shape");
    ndarray::linalg::general_mat_mul(R::ONE, &av, &bv, beta, &mut cv);
}

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    // Split on sign so neither branch exponentiates a large positive value.
    if x >= R::ZERO {
        R::ONE / (R::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::ONE + e)
    }
}

#[inline]
pub fn silu<R: Real>(x: R) -> R {
    x * sigmoid(x)
}

/// log(sum exp(row)) with max subtraction; finite for any finite input row.
pub fn log_sum_exp<R: Real>(row: &[R]) -> R {
    debug_assert!(!row.is_empty());
    let mut m = row[0];
    for &v in &row[1..] {
        m = m.max(v);
    }
    let mut s = R::ZERO;
    for &v in row {
        s += (v - m).exp();
    }
    m + s.ln()
}

/// Normalizes `row` in place to a probability vector via stable softmax.
pub fn softmax_row_in_place<R: Real>(row: &mut [R]) {
    debug_assert!(!row.is_empty());
    let mut m = row[0];
    for &v in &row[1..] {
        m = m.max(v);
    }
    let mut s = R::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Layer norm over one row: `gamma * (x - mean) / sqrt(var + eps) + beta`.
/// Variance is the biased (1/d) estimator. Writes the normalized pre-scale
/// values into `x_hat_out` when provided (the backward pass needs them).
pub fn layer_norm_row<R: Real>(
    x: &[R],
    gamma: &[R],
    beta: &[R],
    eps: R,
    out: &mut [R],
    mut x_hat_out: Option<&mut [R]>,
) -> (R, R) {
    let d = x.len();
    debug_assert!(d > 0);
    debug_assert_eq!(gamma.len(), d);
    debug_assert_eq!(beta.len(), d);
    debug_assert_eq!(out.len(), d);
    let inv_d = R::ONE / R::from_f64(d as f64);
    let mut mean = R::ZERO;
    for &v in x {
        mean += v;
    }
    mean *= inv_d;
    let mut var = R::ZERO;
    for &v in x {
        let c = v - mean;
        var += c * c;
    }
    var *= inv_d;
    let inv_std = R::ONE / (var + eps).sqrt();
    for i in 0..d {
        let xh = (x[i] - mean) * inv_std;
        if let Some(h) = x_hat_out.as_deref_mut() {
            h[i] = xh;
        }
        out[i] = gamma[i] * xh + beta[i];
    }
    (mean, inv_std)
}

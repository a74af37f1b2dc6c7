//! Slice-level kernels on row-major buffers.
//!
//! All loops run in a fixed order, so results are bit-reproducible for a given
//! build. The model calls these directly to avoid allocating tensors per layer.

use crate::scalar::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] (+)= a[m×k] · b[k×n]`
///
/// Full `MR×NR` output tiles are accumulated in registers over the whole `k`
/// loop and then added to `c`; edge rows and columns use a scalar loop.
pub fn gemm_nn<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|x| *x = T::zero());
    }
    let m_full = m - m % MR;
    let n_full = n - n % NR;
    for i in (0..m_full).step_by(MR) {
        for j in (0..n_full).step_by(NR) {
            let mut acc = [[T::zero(); NR]; MR];
            for p in 0..k {
                let bv: &[T; NR] = b[p * n + j..p * n + j + NR].try_into().expect("tile width");
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for (x, &y) in acc_r.iter_mut().zip(bv) {
                        *x += av * y;
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                let c_row = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                for (x, &y) in c_row.iter_mut().zip(acc_r) {
                    *x += y;
                }
            }
        }
        if n_full < n {
            for r in i..i + MR {
                gemm_row_tail(
                    &a[r * k..(r + 1) * k],
                    b,
                    &mut c[r * n..(r + 1) * n],
                    n,
                    n_full,
                );
            }
        }
    }
    for r in m_full..m {
        gemm_row_tail(&a[r * k..(r + 1) * k], b, &mut c[r * n..(r + 1) * n], n, 0);
    }
}

/// `c_row[from..] += a_row · b[:, from..]`
fn gemm_row_tail<T: Scalar>(a_row: &[T], b: &[T], c_row: &mut [T], n: usize, from: usize) {
    for (p, &av) in a_row.iter().enumerate() {
        if av == T::zero() {
            continue;
        }
        let b_row = &b[p * n + from..(p + 1) * n];
        for (cv, &bv) in c_row[from..].iter_mut().zip(b_row) {
            *cv += av * bv;
        }
    }
}

/// `c[m×n] (+)= aᵀ · b` where `a` is stored `[k×m]` and `b` is `[k×n]`.
pub fn gemm_tn<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), k * m);
    let at = transpose(a, k, m);
    gemm_nn(&at, b, c, m, k, n, accumulate);
}

/// `c[m×n] (+)= a · bᵀ` where `a` is `[m×k]` and `b` is stored `[n×k]`.
pub fn gemm_nt<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let bt = transpose(b, n, k);
    gemm_nn(a, &bt, c, m, k, n, accumulate);
}

pub fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

pub fn add_row_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    let n = bias.len();
    for row in x.chunks_exact_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `out[j] += Σ_rows x[row, j]`
pub fn accumulate_col_sums<T: Scalar>(x: &[T], out: &mut [T]) {
    let n = out.len();
    for row in x.chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub fn add_in_place<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row-wise layer normalization. Writes the affine output to `out`, and the
/// normalized values and reciprocal standard deviations needed by the backward pass.
pub fn layernorm_rows<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    eps: T,
    out: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
) {
    let d = gain.len();
    let inv_d = T::one() / T::of(d as f64);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let o = &mut out[r * d..(r + 1) * d];
        let xh = &mut xhat[r * d..(r + 1) * d];
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xh[j] = h;
            o[j] = h * gain[j] + bias[j];
        }
    }
}

/// Backward of [`layernorm_rows`]. Overwrites `dx`; accumulates into `dgain` and `dbias`.
pub fn layernorm_rows_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let d = gain.len();
    let inv_d = T::one() / T::of(d as f64);
    for (r, (dy_row, xh_row)) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            let g = dy_row[j] * gain[j];
            mean_dxhat += g;
            mean_dxhat_xhat += g * xh_row[j];
            dgain[j] += dy_row[j] * xh_row[j];
            dbias[j] += dy_row[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let dx_row = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let g = dy_row[j] * gain[j];
            dx_row[j] = rstd[r] * (g - mean_dxhat - xh_row[j] * mean_dxhat_xhat);
        }
    }
}

const GELU_CUBIC: f64 = 0.044715;

#[inline]
fn sqrt_2_over_pi<T: Scalar>() -> T {
    T::of((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh-approximated GELU.
pub fn gelu_into<T: Scalar>(x: &[T], out: &mut [T]) {
    let c = sqrt_2_over_pi::<T>();
    let k = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    for (o, &v) in out.iter_mut().zip(x) {
        let t = (c * (v + k * v * v * v)).tanh();
        *o = half * v * (T::one() + t);
    }
}

/// `dx = dy · gelu'(x)`, overwriting `dx`.
pub fn gelu_backward_into<T: Scalar>(x: &[T], dy: &[T], dx: &mut [T]) {
    let c = sqrt_2_over_pi::<T>();
    let k = T::of(GELU_CUBIC);
    let k3 = T::of(3.0 * GELU_CUBIC);
    let half = T::of(0.5);
    for ((o, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
        let t = (c * (v + k * v * v * v)).tanh();
        let deriv =
            half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + k3 * v * v);
        *o = g * deriv;
    }
}

/// Numerically stable in-place softmax over one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Softmax backward for one row: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_row_backward<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T]) {
    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((o, &yv), &g) in dx.iter_mut().zip(y).zip(dy) {
        *o = yv * (g - dot);
    }
}

/// `log Σ exp(row)`, stable.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

//! Differentiable operations with explicit backward rules.
//!
//! Each forward op has a matching `*_backward` that maps the upstream gradient
//! to gradients of its inputs. Forward outputs are checked for NaN/Inf.

pub mod kernels;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Token identifier. Also used for target ids in the loss.
pub type TokenId = u32;

fn checked<T: Scalar>(t: Tensor<T>, op: &str) -> Result<Tensor<T>> {
    t.ensure_finite(op)?;
    Ok(t)
}

fn as_matrix<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => dim_err(format!("{what} must be 2-D, got shape {s:?}")),
    }
}

/// `c = a · b` for `a: [m×k]`, `b: [k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = as_matrix(a, "matmul lhs")?;
    let (k2, n) = as_matrix(b, "matmul rhs")?;
    if k != k2 {
        return dim_err(format!("matmul inner dims differ: {m}×{k} by {k2}×{n}"));
    }
    let mut c = vec![T::zero(); m * n];
    kernels::gemm_nn(a.data(), b.data(), &mut c, m, k, n, false);
    checked(Tensor::new(vec![m, n], c)?, "matmul output")
}

/// Returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = as_matrix(a, "matmul lhs")?;
    let (_, n) = as_matrix(b, "matmul rhs")?;
    if dc.shape() != [m, n] {
        return dim_err(format!(
            "upstream gradient shape {:?}, expected [{m}, {n}]",
            dc.shape()
        ));
    }
    let mut da = vec![T::zero(); m * k];
    kernels::gemm_nt(dc.data(), b.data(), &mut da, m, n, k, false);
    let mut db = vec![T::zero(); k * n];
    kernels::gemm_tn(a.data(), dc.data(), &mut db, k, m, n, false);
    Ok((Tensor::new(vec![m, k], da)?, Tensor::new(vec![k, n], db)?))
}

/// Saved state from [`layernorm`] needed by its backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub const DEFAULT_LAYERNORM_EPS: f64 = 1e-5;

/// Normalizes each row of `x: [...×d]` to zero mean and unit variance, then applies `gain` and `bias`.
pub fn layernorm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.last_dim();
    if gain.shape() != [d] || bias.shape() != [d] {
        return dim_err(format!(
            "layernorm gain/bias must be [{d}], got {:?}/{:?}",
            gain.shape(),
            bias.shape()
        ));
    }
    if eps <= T::zero() {
        return Err(Error::Config("layernorm eps must be positive".into()));
    }
    let rows = x.rows();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    kernels::layernorm_rows(
        x.data(),
        gain.data(),
        bias.data(),
        eps,
        &mut out,
        &mut xhat,
        &mut rstd,
    );
    let y = checked(Tensor::new(x.shape().to_vec(), out)?, "layernorm output")?;
    Ok((y, LayerNormCache { xhat, rstd }))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layernorm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = gain.len();
    if dy.last_dim() != d || dy.len() != cache.xhat.len() {
        return dim_err("layernorm upstream gradient does not match cached input");
    }
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgain = vec![T::zero(); d];
    let mut dbias = vec![T::zero(); d];
    kernels::layernorm_rows_backward(
        dy.data(),
        &cache.xhat,
        &cache.rstd,
        gain.data(),
        &mut dx,
        &mut dgain,
        &mut dbias,
    );
    Ok((
        Tensor::new(dy.shape().to_vec(), dx)?,
        Tensor::new(vec![d], dgain)?,
        Tensor::new(vec![d], dbias)?,
    ))
}

/// Tanh-approximated GELU, elementwise.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = vec![T::zero(); x.len()];
    kernels::gelu_into(x.data(), &mut out);
    checked(Tensor::new(x.shape().to_vec(), out)?, "gelu output")
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return dim_err("gelu upstream gradient shape mismatch");
    }
    let mut dx = vec![T::zero(); x.len()];
    kernels::gelu_backward_into(x.data(), dy.data(), &mut dx);
    Tensor::new(x.shape().to_vec(), dx)
}

/// Splits `shape` around `axis` into (outer, axis length, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let mut out = x.data().to_vec();
    let mut lane = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, v) in lane.iter_mut().enumerate() {
                *v = out[base + j * inner];
            }
            kernels::softmax_row(&mut lane);
            for (j, v) in lane.iter().enumerate() {
                out[base + j * inner] = *v;
            }
        }
    }
    checked(Tensor::new(x.shape().to_vec(), out)?, "softmax output")
}

/// Gradient of softmax given its output `y` and upstream `dy`.
pub fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    dy: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return dim_err("softmax upstream gradient shape mismatch");
    }
    let (outer, len, inner) = axis_split(y.shape(), axis)?;
    let mut dx = vec![T::zero(); y.len()];
    let mut yl = vec![T::zero(); len];
    let mut gl = vec![T::zero(); len];
    let mut xl = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for j in 0..len {
                yl[j] = y.data()[base + j * inner];
                gl[j] = dy.data()[base + j * inner];
            }
            kernels::softmax_row_backward(&yl, &gl, &mut xl);
            for j in 0..len {
                dx[base + j * inner] = xl[j];
            }
        }
    }
    Tensor::new(y.shape().to_vec(), dx)
}

/// Gathers rows of `table: [V×d]` for each id, giving `[ids.len() × d]`.
pub fn embedding_lookup<T: Scalar>(table: &Tensor<T>, ids: &[TokenId]) -> Result<Tensor<T>> {
    let (v, d) = as_matrix(table, "embedding table")?;
    if ids.is_empty() {
        return Err(Error::Input("embedding lookup of zero ids".into()));
    }
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        let id = id as usize;
        if id >= v {
            return Err(Error::Input(format!(
                "token id {id} out of range for vocabulary of {v}"
            )));
        }
        out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::new(vec![ids.len(), d], out)
}

/// Scatter-adds `dy: [n×d]` into a zero `[vocab×d]` gradient.
pub fn embedding_backward<T: Scalar>(
    ids: &[TokenId],
    dy: &Tensor<T>,
    vocab: usize,
) -> Result<Tensor<T>> {
    let (n, d) = as_matrix(dy, "embedding upstream gradient")?;
    if n != ids.len() {
        return dim_err("embedding gradient rows differ from id count");
    }
    let mut g = Tensor::zeros(&[vocab, d]);
    for (r, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(Error::Input(format!(
                "token id {id} out of range for vocabulary of {vocab}"
            )));
        }
        kernels::add_in_place(
            &mut g.data_mut()[id * d..(id + 1) * d],
            &dy.data()[r * d..(r + 1) * d],
        );
    }
    Ok(g)
}

/// Result of [`cross_entropy`]: mean loss plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct CrossEntropy<T> {
    pub loss: T,
    /// Row softmax of the logits.
    pub probs: Tensor<T>,
    /// Number of rows that contributed (targets ≠ ignore index).
    pub count: usize,
    /// Sum of per-row negative log likelihoods, in f64.
    pub nll_sum: f64,
}

/// Mean negative log likelihood of `targets` under row-softmax of `logits: [N×V]`.
///
/// Rows whose target equals `ignore_index` are excluded from both the sum and
/// the count. With zero counted rows the loss is 0.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[TokenId],
    ignore_index: TokenId,
) -> Result<CrossEntropy<T>> {
    let (n, v) = as_matrix(logits, "logits")?;
    if targets.len() != n {
        return dim_err(format!("{} targets for {n} logit rows", targets.len()));
    }
    logits.ensure_finite("logits")?;
    let mut probs = logits.data().to_vec();
    let mut nll_sum = 0.0f64;
    let mut count = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        let row = &mut probs[r * v..(r + 1) * v];
        if t != ignore_index {
            if t as usize >= v {
                return Err(Error::Input(format!(
                    "target id {t} out of range for vocabulary of {v}"
                )));
            }
            let lse = kernels::log_sum_exp(row);
            nll_sum += (lse - row[t as usize]).as_f64();
            count += 1;
        }
        kernels::softmax_row(row);
    }
    let loss = if count == 0 {
        0.0
    } else {
        nll_sum / count as f64
    };
    Ok(CrossEntropy {
        loss: T::of(loss),
        probs: Tensor::new(vec![n, v], probs)?,
        count,
        nll_sum,
    })
}

/// Gradient of `dloss · mean NLL` with respect to the logits.
pub fn cross_entropy_backward<T: Scalar>(
    ce: &CrossEntropy<T>,
    targets: &[TokenId],
    ignore_index: TokenId,
    dloss: T,
) -> Tensor<T> {
    let v = ce.probs.last_dim();
    let mut g = ce.probs.clone();
    if ce.count == 0 {
        g.fill(T::zero());
        return g;
    }
    let scale = dloss / T::of(ce.count as f64);
    for (r, &t) in targets.iter().enumerate() {
        let row = &mut g.data_mut()[r * v..(r + 1) * v];
        if t == ignore_index {
            row.iter_mut().for_each(|x| *x = T::zero());
        } else {
            row[t as usize] -= T::one();
            row.iter_mut().for_each(|x| *x *= scale);
        }
    }
    g
}

//! Forward kernels and their exact adjoints.
//!
//! Row-vector convention throughout: a layer maps `x[n×d_in]` to
//! `x·W + b` with `W[d_in×d_out]`.

use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

/// Smallest norm accepted by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

fn check_bias(b: &Tensor, d_out: usize) -> Result<()> {
    let n = b.dim1()?;
    if n != d_out {
        return Err(Error::Shape(format!("bias of length {n} for width {d_out}")));
    }
    Ok(())
}

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, d_out) = w.dims2()?;
    check_bias(b, d_out)?;
    let mut y = x.matmul(w)?;
    for i in 0..y.rows() {
        for (v, bias) in y.row_mut(i).iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    y.check_finite("linear output")?;
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<LinearGrads> {
    let (n, d_in) = x.dims2()?;
    let (w_in, d_out) = w.dims2()?;
    if w_in != d_in || dy.shape() != [n, d_out] {
        return Err(Error::Shape(format!(
            "linear backward x{:?} w{:?} dy{:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        )));
    }
    let dx = dy.matmul_t(w)?;
    let dw = x.t_matmul(dy)?;
    let mut db = vec![0.0; d_out];
    for i in 0..n {
        for (acc, g) in db.iter_mut().zip(dy.row(i)) {
            *acc += g;
        }
    }
    Ok(LinearGrads {
        dx,
        dw,
        db: Tensor::vector(db)?,
    })
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Adjoint of tanh given its output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::Shape("tanh backward".into()));
    }
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&t, &g)| g * (1.0 - t * t))
        .collect();
    Tensor::new(y.shape(), data)
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (n, m) = x.dims2()?;
    x.check_finite("softmax input")?;
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= sum);
    }
    Tensor::matrix(n, m, out)
}

/// Adjoint of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    let (n, m) = y.dims2()?;
    if dy.shape() != [n, m] {
        return Err(Error::Shape("softmax backward".into()));
    }
    let mut dx = Vec::with_capacity(n * m);
    for i in 0..n {
        let (yr, gr) = (y.row(i), dy.row(i));
        let inner = dot(yr, gr);
        dx.extend(yr.iter().zip(gr).map(|(&p, &g)| p * (g - inner)));
    }
    Tensor::matrix(n, m, dx)
}

/// Intermediate values of one cross-attention forward pass, kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    e_cur: Tensor,
    e_con: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: Tensor,
}

impl AttentionCache {
    /// Attention weights `[n_cur × n_con]`; each row sums to one.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub d_cur: Tensor,
    pub d_con: Tensor,
    pub d_wq: Tensor,
    pub d_wk: Tensor,
    pub d_wv: Tensor,
}

/// Single-head cross attention: queries from the current text, keys and
/// values from the context.
///
/// `out = softmax(Q·Kᵀ/√d)·V` with `Q = E_cur·W_Q`, `K = E_con·W_K`,
/// `V = E_con·W_V`.
pub fn cross_attention(
    e_cur: &Tensor,
    e_con: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
) -> Result<(Tensor, AttentionCache)> {
    let (_, d) = e_cur.dims2()?;
    let (n_k, d_con) = e_con.dims2()?;
    if n_k == 0 {
        return Err(Error::EmptyContext);
    }
    if d_con != d {
        return Err(Error::Shape(format!(
            "current width {d} differs from context width {d_con}"
        )));
    }
    for (name, w) in [("W_Q", wq), ("W_K", wk), ("W_V", wv)] {
        let (r, _) = w.dims2()?;
        if r != d {
            return Err(Error::Shape(format!("{name} has {r} rows, expected {d}")));
        }
    }
    let q = e_cur.matmul(wq)?;
    let k = e_con.matmul(wk)?;
    let v = e_con.matmul(wv)?;
    if q.cols() != k.cols() {
        return Err(Error::Shape("query and key widths differ".into()));
    }
    let mut scores = q.matmul_t(&k)?;
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    let weights = softmax_rows(&scores)?;
    let out = weights.matmul(&v)?;
    out.check_finite("attention output")?;
    Ok((
        out,
        AttentionCache {
            e_cur: e_cur.clone(),
            e_con: e_con.clone(),
            q,
            k,
            v,
            weights,
        },
    ))
}

pub fn cross_attention_backward(
    cache: &AttentionCache,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    d_out: &Tensor,
) -> Result<AttentionGrads> {
    let scale = 1.0 / (cache.q.cols() as f64).sqrt();
    let d_weights = d_out.matmul_t(&cache.v)?;
    let d_v = cache.weights.t_matmul(d_out)?;
    let mut d_scores = softmax_rows_backward(&cache.weights, &d_weights)?;
    d_scores.scale(scale);
    let d_q = d_scores.matmul(&cache.k)?;
    let d_k = d_scores.t_matmul(&cache.q)?;

    let d_wq = cache.e_cur.t_matmul(&d_q)?;
    let d_wk = cache.e_con.t_matmul(&d_k)?;
    let d_wv = cache.e_con.t_matmul(&d_v)?;
    let d_cur = d_q.matmul_t(wq)?;
    let mut d_con = d_k.matmul_t(wk)?;
    d_con.add_assign(&d_v.matmul_t(wv)?)?;
    Ok(AttentionGrads {
        d_cur,
        d_con,
        d_wq,
        d_wk,
        d_wv,
    })
}

/// Arithmetic mean over rows.
pub fn mean_pool(x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    if n == 0 {
        return Err(Error::Shape("mean pool over zero rows".into()));
    }
    let mut acc = vec![0.0; d];
    for i in 0..n {
        for (a, v) in acc.iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Tensor::vector(acc)
}

pub fn mean_pool_backward(n: usize, dy: &Tensor) -> Result<Tensor> {
    let d = dy.dim1()?;
    let inv = 1.0 / n as f64;
    let row: Vec<f64> = dy.data().iter().map(|g| g * inv).collect();
    Tensor::matrix(n, d, row.repeat(n))
}

/// Returns `(v/‖v‖, ‖v‖)`.
pub fn l2_normalize(v: &Tensor) -> Result<(Tensor, f64)> {
    v.dim1()?;
    let norm = dot(v.data(), v.data()).sqrt();
    if !(norm > NORM_EPS) {
        return Err(Error::DegenerateEmbedding(norm));
    }
    Ok((v.map(|x| x / norm), norm))
}

/// Adjoint of [`l2_normalize`]: `(dy − y·(y·dy)) / ‖v‖`.
pub fn l2_normalize_backward(y: &Tensor, norm: f64, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::Shape("normalize backward".into()));
    }
    let inner = dot(y.data(), dy.data());
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&u, &g)| (g - u * inner) / norm)
        .collect();
    Tensor::new(y.shape(), data)
}

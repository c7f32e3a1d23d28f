//! Rank-local math shared by the serial and the distributed layers. Nothing
//! in here communicates.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Upper bound on the `[s, s]` score buffer of one attention head.
pub const MAX_SCORE_ELEMENTS: usize = 1 << 22;

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn check_row_vector(op: &'static str, x: &Matrix, v: &Matrix) -> Result<()> {
    if v.rows() != 1 || v.cols() != x.cols() {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape(),
            right: v.shape(),
        });
    }
    Ok(())
}

/// `x + 1·v` for a `[1, cols]` row vector `v`.
pub fn add_row(x: &Matrix, v: &Matrix) -> Result<Matrix> {
    check_row_vector("add_row", x, v)?;
    let mut y = x.clone();
    for r in 0..y.rows() {
        for (a, b) in y.row_mut(r).iter_mut().zip(v.row(0)) {
            *a += b;
        }
    }
    Ok(y)
}

/// Scales column `c` of `x` by `v[c]`.
pub fn mul_row(x: &Matrix, v: &Matrix) -> Result<Matrix> {
    check_row_vector("mul_row", x, v)?;
    let mut y = x.clone();
    for r in 0..y.rows() {
        for (a, b) in y.row_mut(r).iter_mut().zip(v.row(0)) {
            *a *= b;
        }
    }
    Ok(y)
}

/// Per-row `[Σx, Σx²]`.
pub fn row_moments(x: &Matrix) -> Matrix {
    let mut m = Matrix::zeros(x.rows(), 2);
    for r in 0..x.rows() {
        let (mut s, mut s2) = (0.0, 0.0);
        for &v in x.row(r) {
            s += v;
            s2 += v * v;
        }
        m.set(r, 0, s);
        m.set(r, 1, s2);
    }
    m
}

/// Normalized activations and the per-row `1/√(Var + ε)`.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub xhat: Matrix,
    pub rstd: Vec<f64>,
}

/// Normalizes `x` given full-row moments over `width` hidden units:
/// `E = Σx/width`, `Var = E[x²] − E²` (clamped at 0).
pub fn normalize(x: &Matrix, moments: &Matrix, width: usize, eps: f64) -> Normalized {
    let n = width as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let mean = moments.get(r, 0) / n;
        let var = (moments.get(r, 1) / n - mean * mean).max(0.0);
        let s = 1.0 / (var + eps).sqrt();
        for v in xhat.row_mut(r) {
            *v = (*v - mean) * s;
        }
        rstd.push(s);
    }
    Normalized { xhat, rstd }
}

/// Per-row `[Σg, Σx̂·g]` for the layernorm input gradient.
pub fn normalize_grad_sums(g: &Matrix, xhat: &Matrix) -> Matrix {
    let mut m = Matrix::zeros(g.rows(), 2);
    for r in 0..g.rows() {
        let (mut s, mut sx) = (0.0, 0.0);
        for (a, b) in g.row(r).iter().zip(xhat.row(r)) {
            s += a;
            sx += a * b;
        }
        m.set(r, 0, s);
        m.set(r, 1, sx);
    }
    m
}

/// `X′ = (g − (Σx̂g)·x̂/width − Σg/width)·rstd`, with `g = dY·γ` and
/// full-row `sums` from [`normalize_grad_sums`].
pub fn normalize_input_grad(g: &Matrix, norm: &Normalized, sums: &Matrix, width: usize) -> Matrix {
    let n = width as f64;
    let mut dx = g.clone();
    for r in 0..g.rows() {
        let (sg, sxg) = (sums.get(r, 0) / n, sums.get(r, 1) / n);
        let s = norm.rstd[r];
        for (v, xh) in dx.row_mut(r).iter_mut().zip(norm.xhat.row(r)) {
            *v = (*v - sxg * xh - sg) * s;
        }
    }
    dx
}

/// `[2, cols]`: column sums of `dY·x̂` (gain gradient) over column sums of `dY`
/// (bias gradient).
pub fn norm_param_grads(dy: &Matrix, xhat: &Matrix) -> Result<Matrix> {
    let dg = dy.hadamard(xhat)?.col_sums();
    let db = dy.col_sums();
    let mut out = Matrix::zeros(2, dy.cols());
    out.set_block(0, 0, &dg);
    out.set_block(1, 0, &db);
    Ok(out)
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    y
}

/// Geometry of a packed `[rows, heads·3·dh]` QKV buffer: per head `Q | K | V`,
/// each `dh` wide, rows grouped into sequences of length `seq`.
#[derive(Clone, Copy, Debug)]
pub struct HeadLayout {
    pub seq: usize,
    pub heads: usize,
    pub dh: usize,
}

impl HeadLayout {
    pub fn new(qkv: &Matrix, seq: usize, heads: usize) -> Result<Self> {
        if seq == 0 || heads == 0 {
            return Err(Error::InvalidArgument("attention needs s > 0 and n > 0".into()));
        }
        if !qkv.rows().is_multiple_of(seq) {
            return Err(Error::divisibility("attention rows", qkv.rows(), seq));
        }
        if !qkv.cols().is_multiple_of(3 * heads) {
            return Err(Error::divisibility("qkv columns", qkv.cols(), 3 * heads));
        }
        if seq * seq > MAX_SCORE_ELEMENTS {
            return Err(Error::InvalidArgument(format!(
                "score buffer of {seq}x{seq} exceeds {MAX_SCORE_ELEMENTS} elements"
            )));
        }
        Ok(HeadLayout {
            seq,
            heads,
            dh: qkv.cols() / (3 * heads),
        })
    }

    fn scale(&self) -> f64 {
        1.0 / (self.dh as f64).sqrt()
    }
}

fn qkv_parts(qkv: &Matrix, l: HeadLayout, m: usize, g: usize) -> (Matrix, Matrix, Matrix) {
    let r0 = m * l.seq;
    let c0 = g * 3 * l.dh;
    (
        qkv.block(r0, c0, l.seq, l.dh),
        qkv.block(r0, c0 + l.dh, l.seq, l.dh),
        qkv.block(r0, c0 + 2 * l.dh, l.seq, l.dh),
    )
}

/// Per sequence and head `softmax(QKᵀ/√dh)·V`. Returns the concatenated head
/// outputs `[rows, heads·dh]` and the probabilities, indexed `m·heads + g`.
pub fn attention(qkv: &Matrix, l: HeadLayout) -> Result<(Matrix, Vec<Matrix>)> {
    let samples = qkv.rows() / l.seq;
    let mut out = Matrix::zeros(qkv.rows(), l.heads * l.dh);
    let mut probs = Vec::with_capacity(samples * l.heads);
    for m in 0..samples {
        for g in 0..l.heads {
            let (q, k, v) = qkv_parts(qkv, l, m, g);
            let p = softmax_rows(&q.matmul(&k.transpose())?.scale(l.scale()));
            out.set_block(m * l.seq, g * l.dh, &p.matmul(&v)?);
            probs.push(p);
        }
    }
    Ok((out, probs))
}

/// Gradient of [`attention`] with respect to the packed QKV buffer.
pub fn attention_backward(dout: &Matrix, qkv: &Matrix, probs: &[Matrix], l: HeadLayout) -> Result<Matrix> {
    let samples = qkv.rows() / l.seq;
    let mut dqkv = Matrix::zeros(qkv.rows(), qkv.cols());
    for m in 0..samples {
        for g in 0..l.heads {
            let (q, k, v) = qkv_parts(qkv, l, m, g);
            let p = &probs[m * l.heads + g];
            let d_o = dout.block(m * l.seq, g * l.dh, l.seq, l.dh);
            let dv = p.transpose().matmul(&d_o)?;
            let dp = d_o.matmul(&v.transpose())?;
            let mut ds = dp.hadamard(p)?;
            for r in 0..ds.rows() {
                let dot: f64 = ds.row(r).iter().sum();
                for (x, pv) in ds.row_mut(r).iter_mut().zip(p.row(r)) {
                    *x -= pv * dot;
                }
            }
            let ds = ds.scale(l.scale());
            let dq = ds.matmul(&k)?;
            let dk = ds.transpose().matmul(&q)?;
            let c0 = g * 3 * l.dh;
            dqkv.set_block(m * l.seq, c0, &dq);
            dqkv.set_block(m * l.seq, c0 + l.dh, &dk);
            dqkv.set_block(m * l.seq, c0 + 2 * l.dh, &dv);
        }
    }
    Ok(dqkv)
}

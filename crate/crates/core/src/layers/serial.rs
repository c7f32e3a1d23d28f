//! Single-process reference layers on global `[b·s, h]` activations.

use super::kernels::{self, HeadLayout, Normalized};
use super::{Layer, LayerParams, ModelDims};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    kernels::add_row(&x.matmul(w)?, b)
}

fn linear_grads(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    Ok((dy.matmul(&w.transpose())?, x.transpose().matmul(dy)?, dy.col_sums()))
}

pub fn layernorm(x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<(Matrix, Normalized)> {
    let norm = kernels::normalize(x, &kernels::row_moments(x), x.cols(), eps);
    let y = kernels::add_row(&kernels::mul_row(&norm.xhat, gain)?, bias)?;
    Ok((y, norm))
}

fn layernorm_grads(norm: &Normalized, gain: &Matrix, dy: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let g = kernels::mul_row(dy, gain)?;
    let sums = kernels::normalize_grad_sums(&g, &norm.xhat);
    let dx = kernels::normalize_input_grad(&g, norm, &sums, dy.cols());
    let pg = kernels::norm_param_grads(dy, &norm.xhat)?;
    let w = pg.cols();
    Ok((dx, pg.block(0, 0, 1, w), pg.block(1, 0, 1, w)))
}

pub fn feedforward(x: &Matrix, p: &LayerParams) -> Result<Matrix> {
    let act = linear(x, &p.ff1_weight, &p.ff1_bias)?.map(kernels::gelu);
    linear(&act, &p.ff2_weight, &p.ff2_bias)
}

fn feedforward_grads(x: &Matrix, p: &LayerParams, dy: &Matrix, grads: &mut LayerParams) -> Result<Matrix> {
    let pre = linear(x, &p.ff1_weight, &p.ff1_bias)?;
    let act = pre.map(kernels::gelu);
    let (dact, dw2, db2) = linear_grads(&act, &p.ff2_weight, dy)?;
    let dpre = dact.hadamard(&pre.map(kernels::gelu_grad))?;
    let (dx, dw1, db1) = linear_grads(x, &p.ff1_weight, &dpre)?;
    grads.ff1_weight = dw1;
    grads.ff1_bias = db1;
    grads.ff2_weight = dw2;
    grads.ff2_bias = db2;
    Ok(dx)
}

pub fn attention(dims: ModelDims, x: &Matrix, p: &LayerParams) -> Result<Matrix> {
    let qkv = linear(x, &p.qkv_weight, &p.qkv_bias)?;
    let (heads, _) = kernels::attention(&qkv, HeadLayout::new(&qkv, dims.s, dims.n)?)?;
    linear(&heads, &p.proj_weight, &p.proj_bias)
}

fn attention_grads(dims: ModelDims, x: &Matrix, p: &LayerParams, dy: &Matrix, grads: &mut LayerParams) -> Result<Matrix> {
    let qkv = linear(x, &p.qkv_weight, &p.qkv_bias)?;
    let layout = HeadLayout::new(&qkv, dims.s, dims.n)?;
    let (heads, probs) = kernels::attention(&qkv, layout)?;
    let (dheads, dwp, dbp) = linear_grads(&heads, &p.proj_weight, dy)?;
    let dqkv = kernels::attention_backward(&dheads, &qkv, &probs, layout)?;
    let (dx, dwq, dbq) = linear_grads(x, &p.qkv_weight, &dqkv)?;
    grads.qkv_weight = dwq;
    grads.qkv_bias = dbq;
    grads.proj_weight = dwp;
    grads.proj_bias = dbp;
    Ok(dx)
}

pub fn block(dims: ModelDims, x: &Matrix, p: &LayerParams) -> Result<Matrix> {
    let (n1, _) = layernorm(x, &p.ln1_gain, &p.ln1_bias, p.eps)?;
    let hmid = x.add(&attention(dims, &n1, p)?)?;
    let (n2, _) = layernorm(&hmid, &p.ln2_gain, &p.ln2_bias, p.eps)?;
    hmid.add(&feedforward(&n2, p)?)
}

fn block_grads(dims: ModelDims, x: &Matrix, p: &LayerParams, dy: &Matrix, grads: &mut LayerParams) -> Result<Matrix> {
    let (n1, norm1) = layernorm(x, &p.ln1_gain, &p.ln1_bias, p.eps)?;
    let hmid = x.add(&attention(dims, &n1, p)?)?;
    let (n2, norm2) = layernorm(&hmid, &p.ln2_gain, &p.ln2_bias, p.eps)?;
    let dn2 = feedforward_grads(&n2, p, dy, grads)?;
    let (dh2, dg2, db2) = layernorm_grads(&norm2, &p.ln2_gain, &dn2)?;
    grads.ln2_gain = dg2;
    grads.ln2_bias = db2;
    let dh = dy.add(&dh2)?;
    let dn1 = attention_grads(dims, &n1, p, &dh, grads)?;
    let (dx1, dg1, db1) = layernorm_grads(&norm1, &p.ln1_gain, &dn1)?;
    grads.ln1_gain = dg1;
    grads.ln1_bias = db1;
    dh.add(&dx1)
}

fn check_input(dims: ModelDims, x: &Matrix) -> Result<()> {
    if x.shape() != (dims.rows(), dims.h) {
        return Err(Error::ShapeMismatch {
            op: "serial layer input",
            left: (dims.rows(), dims.h),
            right: x.shape(),
        });
    }
    Ok(())
}

pub fn forward(layer: Layer, dims: ModelDims, x: &Matrix, p: &LayerParams) -> Result<Matrix> {
    check_input(dims, x)?;
    match layer {
        Layer::FeedForward => feedforward(x, p),
        Layer::Attention => attention(dims, x, p),
        Layer::LayerNorm => layernorm(x, &p.ln1_gain, &p.ln1_bias, p.eps).map(|(y, _)| y),
        Layer::BiasAdd => kernels::add_row(x, &p.proj_bias),
        Layer::Block => block(dims, x, p),
    }
}

/// Input gradient and parameter gradients for output gradient `dy`.
pub fn backward(layer: Layer, dims: ModelDims, x: &Matrix, p: &LayerParams, dy: &Matrix) -> Result<(Matrix, LayerParams)> {
    check_input(dims, x)?;
    check_input(dims, dy)?;
    let mut grads = p.zeros_like();
    let dx = match layer {
        Layer::FeedForward => feedforward_grads(x, p, dy, &mut grads)?,
        Layer::Attention => attention_grads(dims, x, p, dy, &mut grads)?,
        Layer::LayerNorm => {
            let (_, norm) = layernorm(x, &p.ln1_gain, &p.ln1_bias, p.eps)?;
            let (dx, dg, db) = layernorm_grads(&norm, &p.ln1_gain, dy)?;
            grads.ln1_gain = dg;
            grads.ln1_bias = db;
            dx
        }
        Layer::BiasAdd => {
            grads.proj_bias = dy.col_sums();
            dy.clone()
        }
        Layer::Block => block_grads(dims, x, p, dy, &mut grads)?,
    };
    Ok((dx, grads))
}

//! Per-rank layer programs. Each function runs inside an SPMD program and
//! sees only this rank's blocks; caches for the backward pass stay local.

use super::kernels::{self, HeadLayout, Normalized};
use super::{Layer, LayerParams, ModelDims};
use crate::algorithms::tesseract::{nn_local, nt_local, tn_local};
use crate::error::Result;
use crate::grid::GroupKind;
use crate::runtime::RankCtx;
use crate::tensor::Matrix;

/// Forward bias-add: the row-0 rank of each column group broadcasts its bias
/// shard down the column.
pub fn bias_forward(ctx: &mut RankCtx<'_>, x: &Matrix, bias: &Matrix) -> Result<Matrix> {
    let root = ctx.coord().i == 0;
    let b = ctx.broadcast(GroupKind::Column, 0, root.then_some(bias))?;
    kernels::add_row(x, &b)
}

/// Bias gradient: column sums reduced to row 0, then summed over depth so
/// every replica holds the full gradient. Off row 0 the result is `0×0`.
pub fn bias_backward(ctx: &mut RankCtx<'_>, dy: &Matrix) -> Result<Matrix> {
    match ctx.reduce(GroupKind::Column, 0, &dy.col_sums())? {
        Some(sum) => ctx.all_reduce(GroupKind::Depth, &sum),
        None => Ok(Matrix::zeros(0, 0)),
    }
}

pub fn linear_forward(ctx: &mut RankCtx<'_>, x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let y = nn_local(ctx, x, w)?;
    bias_forward(ctx, &y, b)
}

/// Returns `(dX, dW, db)`.
pub fn linear_backward(ctx: &mut RankCtx<'_>, x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let dx = nt_local(ctx, dy, w)?;
    let dw = tn_local(ctx, x, dy)?;
    let db = bias_backward(ctx, dy)?;
    Ok((dx, dw, db))
}

#[derive(Clone, Debug)]
pub struct NormCache {
    norm: Normalized,
}

pub fn layernorm_forward(
    ctx: &mut RankCtx<'_>,
    x: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
    width: usize,
    eps: f64,
) -> Result<(Matrix, NormCache)> {
    let moments = ctx.all_reduce(GroupKind::Row, &kernels::row_moments(x))?;
    let norm = kernels::normalize(x, &moments, width, eps);
    let y = kernels::add_row(&kernels::mul_row(&norm.xhat, gain)?, bias)?;
    Ok((y, NormCache { norm }))
}

/// Returns `(dX, dgain, dbias)`; the parameter gradients are summed over the
/// column and depth groups.
pub fn layernorm_backward(
    ctx: &mut RankCtx<'_>,
    cache: &NormCache,
    gain: &Matrix,
    dy: &Matrix,
    width: usize,
) -> Result<(Matrix, Matrix, Matrix)> {
    let g = kernels::mul_row(dy, gain)?;
    let sums = ctx.all_reduce(GroupKind::Row, &kernels::normalize_grad_sums(&g, &cache.norm.xhat))?;
    let dx = kernels::normalize_input_grad(&g, &cache.norm, &sums, width);
    let pg = kernels::norm_param_grads(dy, &cache.norm.xhat)?;
    let pg = ctx.all_reduce(GroupKind::Column, &pg)?;
    let pg = ctx.all_reduce(GroupKind::Depth, &pg)?;
    let w = pg.cols();
    Ok((dx, pg.block(0, 0, 1, w), pg.block(1, 0, 1, w)))
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache {
    x: Matrix,
    pre: Matrix,
    act: Matrix,
}

pub fn feedforward_forward(ctx: &mut RankCtx<'_>, x: &Matrix, p: &LayerParams) -> Result<(Matrix, FeedForwardCache)> {
    let pre = linear_forward(ctx, x, &p.ff1_weight, &p.ff1_bias)?;
    let act = pre.map(kernels::gelu);
    let y = linear_forward(ctx, &act, &p.ff2_weight, &p.ff2_bias)?;
    Ok((y, FeedForwardCache { x: x.clone(), pre, act }))
}

pub fn feedforward_backward(
    ctx: &mut RankCtx<'_>,
    cache: &FeedForwardCache,
    p: &LayerParams,
    dy: &Matrix,
    grads: &mut LayerParams,
) -> Result<Matrix> {
    let (dact, dw2, db2) = linear_backward(ctx, &cache.act, &p.ff2_weight, dy)?;
    let dpre = dact.hadamard(&cache.pre.map(kernels::gelu_grad))?;
    let (dx, dw1, db1) = linear_backward(ctx, &cache.x, &p.ff1_weight, &dpre)?;
    grads.ff1_weight = dw1;
    grads.ff1_bias = db1;
    grads.ff2_weight = dw2;
    grads.ff2_bias = db2;
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    x: Matrix,
    qkv: Matrix,
    probs: Vec<Matrix>,
    heads_out: Matrix,
    layout: HeadLayout,
}

pub fn attention_forward(
    ctx: &mut RankCtx<'_>,
    dims: ModelDims,
    x: &Matrix,
    p: &LayerParams,
) -> Result<(Matrix, AttentionCache)> {
    let qkv = linear_forward(ctx, x, &p.qkv_weight, &p.qkv_bias)?;
    let layout = HeadLayout::new(&qkv, dims.s, dims.n / ctx.grid().q())?;
    let (heads_out, probs) = kernels::attention(&qkv, layout)?;
    let y = linear_forward(ctx, &heads_out, &p.proj_weight, &p.proj_bias)?;
    Ok((
        y,
        AttentionCache {
            x: x.clone(),
            qkv,
            probs,
            heads_out,
            layout,
        },
    ))
}

pub fn attention_backward(
    ctx: &mut RankCtx<'_>,
    cache: &AttentionCache,
    p: &LayerParams,
    dy: &Matrix,
    grads: &mut LayerParams,
) -> Result<Matrix> {
    let (dheads, dwp, dbp) = linear_backward(ctx, &cache.heads_out, &p.proj_weight, dy)?;
    let dqkv = kernels::attention_backward(&dheads, &cache.qkv, &cache.probs, cache.layout)?;
    let (dx, dwq, dbq) = linear_backward(ctx, &cache.x, &p.qkv_weight, &dqkv)?;
    grads.qkv_weight = dwq;
    grads.qkv_bias = dbq;
    grads.proj_weight = dwp;
    grads.proj_bias = dbp;
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    ln1: NormCache,
    attn: AttentionCache,
    ln2: NormCache,
    ff: FeedForwardCache,
}

/// `H = X + Attn(LN1(X))`, `Y = H + FF(LN2(H))`.
pub fn block_forward(ctx: &mut RankCtx<'_>, dims: ModelDims, x: &Matrix, p: &LayerParams) -> Result<(Matrix, BlockCache)> {
    let (n1, ln1) = layernorm_forward(ctx, x, &p.ln1_gain, &p.ln1_bias, dims.h, p.eps)?;
    let (a, attn) = attention_forward(ctx, dims, &n1, p)?;
    let hmid = x.add(&a)?;
    let (n2, ln2) = layernorm_forward(ctx, &hmid, &p.ln2_gain, &p.ln2_bias, dims.h, p.eps)?;
    let (f, ff) = feedforward_forward(ctx, &n2, p)?;
    let y = hmid.add(&f)?;
    Ok((y, BlockCache { ln1, attn, ln2, ff }))
}

pub fn block_backward(
    ctx: &mut RankCtx<'_>,
    dims: ModelDims,
    cache: &BlockCache,
    p: &LayerParams,
    dy: &Matrix,
    grads: &mut LayerParams,
) -> Result<Matrix> {
    let dn2 = feedforward_backward(ctx, &cache.ff, p, dy, grads)?;
    let (dh2, dg2, db2) = layernorm_backward(ctx, &cache.ln2, &p.ln2_gain, &dn2, dims.h)?;
    grads.ln2_gain = dg2;
    grads.ln2_bias = db2;
    let dh = dy.add(&dh2)?;
    let dn1 = attention_backward(ctx, &cache.attn, p, &dh, grads)?;
    let (dx1, dg1, db1) = layernorm_backward(ctx, &cache.ln1, &p.ln1_gain, &dn1, dims.h)?;
    grads.ln1_gain = dg1;
    grads.ln1_bias = db1;
    dh.add(&dx1)
}

#[derive(Clone, Debug)]
pub enum Cache {
    FeedForward(FeedForwardCache),
    Attention(AttentionCache),
    LayerNorm(NormCache),
    BiasAdd,
    Block(Box<BlockCache>),
}

pub fn forward(ctx: &mut RankCtx<'_>, layer: Layer, dims: ModelDims, x: &Matrix, p: &LayerParams) -> Result<(Matrix, Cache)> {
    Ok(match layer {
        Layer::FeedForward => {
            let (y, c) = feedforward_forward(ctx, x, p)?;
            (y, Cache::FeedForward(c))
        }
        Layer::Attention => {
            let (y, c) = attention_forward(ctx, dims, x, p)?;
            (y, Cache::Attention(c))
        }
        Layer::LayerNorm => {
            let (y, c) = layernorm_forward(ctx, x, &p.ln1_gain, &p.ln1_bias, dims.h, p.eps)?;
            (y, Cache::LayerNorm(c))
        }
        Layer::BiasAdd => (bias_forward(ctx, x, &p.proj_bias)?, Cache::BiasAdd),
        Layer::Block => {
            let (y, c) = block_forward(ctx, dims, x, p)?;
            (y, Cache::Block(Box::new(c)))
        }
    })
}

/// Returns the input gradient and this rank's parameter gradients (zero for
/// tensors the layer does not use).
pub fn backward(
    ctx: &mut RankCtx<'_>,
    layer: Layer,
    dims: ModelDims,
    cache: &Cache,
    p: &LayerParams,
    dy: &Matrix,
) -> Result<(Matrix, LayerParams)> {
    let mut grads = p.zeros_like();
    let dx = match (layer, cache) {
        (Layer::FeedForward, Cache::FeedForward(c)) => feedforward_backward(ctx, c, p, dy, &mut grads)?,
        (Layer::Attention, Cache::Attention(c)) => attention_backward(ctx, c, p, dy, &mut grads)?,
        (Layer::LayerNorm, Cache::LayerNorm(c)) => {
            let (dx, dg, db) = layernorm_backward(ctx, c, &p.ln1_gain, dy, dims.h)?;
            grads.ln1_gain = dg;
            grads.ln1_bias = db;
            dx
        }
        (Layer::BiasAdd, Cache::BiasAdd) => {
            grads.proj_bias = bias_backward(ctx, dy)?;
            dy.clone()
        }
        (Layer::Block, Cache::Block(c)) => block_backward(ctx, dims, c, p, dy, &mut grads)?,
        (layer, _) => {
            return Err(crate::Error::InvalidArgument(format!(
                "missing forward cache for {layer}"
            )))
        }
    };
    Ok((dx, grads))
}

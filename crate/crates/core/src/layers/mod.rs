//! Transformer building blocks on the Tesseract grid.
//!
//! Activations are `[b·s, h]` matrices (row `m·s + t` is token `t` of sample
//! `m`) in the TesseractA layout, so every rank owns `b/(dq)` whole sequences
//! and `h/q` hidden columns. Weights use the TesseractB layout and are
//! replicated over depth.
//!
//! Parameters of one block:
//!
//! | tensor          | shape    | layout |
//! |-----------------|----------|--------|
//! | `ln1_*`, `ln2_*`| `[1, h]` | column shard `j` on every rank of column `j` |
//! | `qkv_weight`    | `[h, 3h]`| TesseractB |
//! | `proj_weight`   | `[h, h]` | TesseractB |
//! | `ff1_weight`    | `[h, 4h]`| TesseractB |
//! | `ff2_weight`    | `[4h, h]`| TesseractB |
//! | `*_bias` of a linear layer | `[1, out]` | column shard `j` on the row-0 ranks |
//!
//! The QKV columns are grouped per head as `[Q_g | K_g | V_g]`, each `h/n`
//! wide, so a column shard holds whole heads.
//!
//! The block is pre-norm: `H = X + Attn(LN1(X))`, `Y = H + FF(LN2(H))`.

mod kernels;
pub mod local;
pub mod serial;
pub mod toy;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, RankCoord};
use crate::rng::random_matrix;
use crate::runtime::{run_spmd, CommStats};
use crate::tensor::{Matrix, ShardScheme, ShardedMatrix};

pub use kernels::{gelu, gelu_grad, MAX_SCORE_ELEMENTS};

/// Model dimensions: batch, sequence length, hidden size, attention heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub b: usize,
    pub s: usize,
    pub h: usize,
    pub n: usize,
}

impl ModelDims {
    pub fn new(b: usize, s: usize, h: usize, n: usize) -> Self {
        ModelDims { b, s, h, n }
    }

    pub fn rows(&self) -> usize {
        self.b * self.s
    }

    /// Checks the sharding constraints for `grid`.
    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let (q, d) = (grid.q(), grid.d());
        if self.b == 0 || self.s == 0 || self.h == 0 || self.n == 0 {
            return Err(Error::InvalidArgument(format!("model dims must be positive, got {self}")));
        }
        if !self.b.is_multiple_of(q * d) {
            return Err(Error::divisibility("batch b", self.b, q * d));
        }
        if !self.h.is_multiple_of(q) {
            return Err(Error::divisibility("hidden h", self.h, q));
        }
        if !self.h.is_multiple_of(self.n) {
            return Err(Error::divisibility("hidden h", self.h, self.n));
        }
        if !self.n.is_multiple_of(q) {
            return Err(Error::divisibility("heads n", self.n, q));
        }
        Ok(())
    }
}

impl fmt::Display for ModelDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b={},s={},h={},n={}", self.b, self.s, self.h, self.n)
    }
}

/// An activation tensor split over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationShard {
    dims: ModelDims,
    data: ShardedMatrix,
}

impl ActivationShard {
    pub fn partition(x: &Matrix, dims: ModelDims, grid: &GridSpec) -> Result<Self> {
        dims.check(grid)?;
        if x.shape() != (dims.rows(), dims.h) {
            return Err(Error::ShapeMismatch {
                op: "activation",
                left: (dims.rows(), dims.h),
                right: x.shape(),
            });
        }
        let data = ShardedMatrix::partition(x, ShardScheme::TesseractA, grid)?;
        Ok(ActivationShard { dims, data })
    }

    pub fn from_blocks(dims: ModelDims, grid: &GridSpec, blocks: BTreeMap<RankCoord, Matrix>) -> Result<Self> {
        dims.check(grid)?;
        let data = ShardedMatrix::from_blocks((dims.rows(), dims.h), ShardScheme::TesseractA, grid, blocks)?;
        Ok(ActivationShard { dims, data })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn grid(&self) -> &GridSpec {
        self.data.grid()
    }

    pub fn block(&self, c: RankCoord) -> Option<&Matrix> {
        self.data.block(c)
    }

    pub fn sharded(&self) -> &ShardedMatrix {
        &self.data
    }

    pub fn combine(&self) -> Result<Matrix> {
        self.data.combine()
    }
}

/// How a parameter tensor is laid out on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamLayout {
    Weight,
    LinearBias,
    Norm,
}

pub const PARAM_NAMES: [(&str, ParamLayout); 12] = [
    ("ln1_gain", ParamLayout::Norm),
    ("ln1_bias", ParamLayout::Norm),
    ("qkv_weight", ParamLayout::Weight),
    ("qkv_bias", ParamLayout::LinearBias),
    ("proj_weight", ParamLayout::Weight),
    ("proj_bias", ParamLayout::LinearBias),
    ("ln2_gain", ParamLayout::Norm),
    ("ln2_bias", ParamLayout::Norm),
    ("ff1_weight", ParamLayout::Weight),
    ("ff1_bias", ParamLayout::LinearBias),
    ("ff2_weight", ParamLayout::Weight),
    ("ff2_bias", ParamLayout::LinearBias),
];

/// Parameters of one transformer block, either global or one rank's shards.
/// Off row 0 the linear biases are empty `0×0` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub qkv_weight: Matrix,
    pub qkv_bias: Matrix,
    pub proj_weight: Matrix,
    pub proj_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub ff1_weight: Matrix,
    pub ff1_bias: Matrix,
    pub ff2_weight: Matrix,
    pub ff2_bias: Matrix,
    pub eps: f64,
}

pub const DEFAULT_EPS: f64 = 1e-5;

impl LayerParams {
    /// Seeded parameters for hidden size `h`, drawing tensor `t` from stream
    /// `stream_base + t`. Weights are scaled by `1/√fan_in`, biases by 0.1,
    /// gains sit around 1.
    pub fn random(h: usize, seed: u64, stream_base: u64) -> Self {
        let draw = |t: u64, rows: usize, cols: usize| random_matrix(seed, stream_base + t, rows, cols);
        let weight = |t: u64, rows: usize, cols: usize| draw(t, rows, cols).scale(1.0 / (rows as f64).sqrt());
        let bias = |t: u64, cols: usize| draw(t, 1, cols).scale(0.1);
        let gain = |t: u64| draw(t, 1, h).map(|v| 1.0 + 0.1 * v);
        LayerParams {
            ln1_gain: gain(0),
            ln1_bias: bias(1, h),
            qkv_weight: weight(2, h, 3 * h),
            qkv_bias: bias(3, 3 * h),
            proj_weight: weight(4, h, h),
            proj_bias: bias(5, h),
            ln2_gain: gain(6),
            ln2_bias: bias(7, h),
            ff1_weight: weight(8, h, 4 * h),
            ff1_bias: bias(9, 4 * h),
            ff2_weight: weight(10, 4 * h, h),
            ff2_bias: bias(11, h),
            eps: DEFAULT_EPS,
        }
    }

    /// Global parameters with every tensor zero and unit layernorm gains.
    pub fn zeros(h: usize) -> Self {
        let mut p = LayerParams::random(h, 0, 0);
        for t in p.tensors_mut() {
            *t = Matrix::zeros(t.rows(), t.cols());
        }
        p.ln1_gain = Matrix::from_fn(1, h, |_, _| 1.0);
        p.ln2_gain = Matrix::from_fn(1, h, |_, _| 1.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        for t in p.tensors_mut() {
            *t = Matrix::zeros(t.rows(), t.cols());
        }
        p
    }

    pub fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.qkv_weight,
            &self.qkv_bias,
            &self.proj_weight,
            &self.proj_bias,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ff1_weight,
            &self.ff1_bias,
            &self.ff2_weight,
            &self.ff2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.qkv_weight,
            &mut self.qkv_bias,
            &mut self.proj_weight,
            &mut self.proj_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ff1_weight,
            &mut self.ff1_bias,
            &mut self.ff2_weight,
            &mut self.ff2_bias,
        ]
    }

    /// `self −= lr·grad`, tensor by tensor.
    pub fn sgd_step(&mut self, grad: &LayerParams, lr: f64) -> Result<()> {
        for (p, g) in self.tensors_mut().into_iter().zip(grad.tensors()) {
            *p = p.sub(&g.scale(lr))?;
        }
        Ok(())
    }

    /// The shards rank `c` holds.
    pub fn shard(&self, grid: &GridSpec, c: RankCoord) -> Result<Self> {
        let mut out = self.clone();
        for ((_, layout), (dst, src)) in PARAM_NAMES.iter().zip(out.tensors_mut().into_iter().zip(self.tensors())) {
            *dst = shard_tensor(src, *layout, grid, c)?;
        }
        Ok(out)
    }

    /// Reassembles global parameters from per-rank shards, checking that
    /// every replica agrees exactly.
    pub fn gather(grid: &GridSpec, shards: &BTreeMap<RankCoord, LayerParams>) -> Result<Self> {
        let first = shards
            .values()
            .next()
            .ok_or_else(|| Error::InvalidArgument("no parameter shards".into()))?;
        let mut out = first.clone();
        for (t, (_, layout)) in PARAM_NAMES.iter().enumerate() {
            let blocks: BTreeMap<RankCoord, &Matrix> = shards.iter().map(|(c, p)| (*c, p.tensors()[t])).collect();
            *out.tensors_mut()[t] = gather_tensor(&blocks, *layout, grid)?;
        }
        Ok(out)
    }
}

fn shard_tensor(m: &Matrix, layout: ParamLayout, grid: &GridSpec, c: RankCoord) -> Result<Matrix> {
    let q = grid.q();
    match layout {
        ParamLayout::Weight => {
            let scheme = ShardScheme::TesseractB;
            let shape = scheme.block_shape(grid, m.shape())?;
            let (r0, c0) = scheme.block_origin(grid, c, shape);
            Ok(m.block(r0, c0, shape.0, shape.1))
        }
        ParamLayout::LinearBias | ParamLayout::Norm => {
            if m.rows() != 1 {
                return Err(Error::ShapeMismatch {
                    op: "parameter vector",
                    left: (1, m.cols()),
                    right: m.shape(),
                });
            }
            if !m.cols().is_multiple_of(q) {
                return Err(Error::divisibility("parameter vector length", m.cols(), q));
            }
            if layout == ParamLayout::LinearBias && c.i != 0 {
                return Ok(Matrix::zeros(0, 0));
            }
            let w = m.cols() / q;
            Ok(m.block(0, c.j * w, 1, w))
        }
    }
}

fn gather_tensor(blocks: &BTreeMap<RankCoord, &Matrix>, layout: ParamLayout, grid: &GridSpec) -> Result<Matrix> {
    let get = |c: RankCoord| blocks.get(&c).copied().ok_or(Error::MissingBlock(c));
    match layout {
        ParamLayout::Weight => {
            let first = get(RankCoord::new(0, 0, 0))?;
            let shape = (first.rows() * grid.q(), first.cols() * grid.q());
            let owned = grid.coords().map(|c| Ok((c, get(c)?.clone()))).collect::<Result<_>>()?;
            ShardedMatrix::from_blocks(shape, ShardScheme::TesseractB, grid, owned)?.combine()
        }
        ParamLayout::LinearBias | ParamLayout::Norm => {
            let mut parts = Vec::with_capacity(grid.q());
            for j in 0..grid.q() {
                let anchor = RankCoord::new(0, j, 0);
                let reference = get(anchor)?;
                for c in grid.coords().filter(|c| c.j == j) {
                    if layout == ParamLayout::LinearBias && c.i != 0 {
                        continue;
                    }
                    if get(c)? != reference {
                        return Err(Error::ReplicaDivergence { coord: c, other: anchor });
                    }
                }
                parts.push(reference.clone());
            }
            Matrix::hstack(&parts)
        }
    }
}

/// A layer that can be run forward and backward, serially or distributed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// `GELU(X·W1 + b1)·W2 + b2` with `ff1_*` and `ff2_*`.
    FeedForward,
    /// Multi-head self-attention with `qkv_*` and `proj_*`.
    Attention,
    /// Layernorm with `ln1_gain` and `ln1_bias`.
    LayerNorm,
    /// `X + proj_bias`, the bias broadcast on its own.
    BiasAdd,
    /// The full pre-norm block.
    Block,
}

impl Layer {
    pub const ALL: [Layer; 5] = [Layer::FeedForward, Layer::Attention, Layer::LayerNorm, Layer::BiasAdd, Layer::Block];

    pub fn as_str(&self) -> &'static str {
        match self {
            Layer::FeedForward => "feedforward",
            Layer::Attention => "attention",
            Layer::LayerNorm => "layernorm",
            Layer::BiasAdd => "bias_add",
            Layer::Block => "block",
        }
    }

    /// Whether the layer reads tensor `PARAM_NAMES[t]`.
    pub fn uses_param(&self, t: usize) -> bool {
        let name = PARAM_NAMES[t].0;
        match self {
            Layer::FeedForward => name.starts_with("ff"),
            Layer::Attention => name.starts_with("qkv") || name.starts_with("proj"),
            Layer::LayerNorm => name.starts_with("ln1"),
            Layer::BiasAdd => name == "proj_bias",
            Layer::Block => true,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gradients of one layer: input gradient plus parameter gradients.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub input: Matrix,
    pub params: LayerParams,
    pub stats: CommStats,
}

type RankInputs = BTreeMap<RankCoord, (Matrix, LayerParams, Option<Matrix>)>;

fn rank_inputs(
    x: &ActivationShard,
    params: &LayerParams,
    dy: Option<&ActivationShard>,
) -> Result<RankInputs> {
    let grid = *x.grid();
    let mut inputs = BTreeMap::new();
    for c in grid.coords() {
        let xb = x.block(c).ok_or(Error::MissingBlock(c))?.clone();
        let g = match dy {
            Some(dy) => Some(dy.block(c).ok_or(Error::MissingBlock(c))?.clone()),
            None => None,
        };
        inputs.insert(c, (xb, params.shard(&grid, c)?, g));
    }
    Ok(inputs)
}

/// Runs `layer` forward on the grid of `x`.
pub fn layer_forward(layer: Layer, x: &ActivationShard, params: &LayerParams) -> Result<(ActivationShard, CommStats)> {
    let dims = x.dims();
    let grid = *x.grid();
    let run = run_spmd(&grid, rank_inputs(x, params, None)?, |ctx, (xb, p, _)| {
        local::forward(ctx, layer, dims, &xb, &p).map(|(y, _)| y)
    })?;
    Ok((ActivationShard::from_blocks(dims, &grid, run.outputs)?, run.stats))
}

/// Runs `layer` forward then backward with output gradient `dy`, returning
/// global gradients.
pub fn layer_backward(
    layer: Layer,
    x: &ActivationShard,
    params: &LayerParams,
    dy: &ActivationShard,
) -> Result<LayerGrads> {
    let dims = x.dims();
    let grid = *x.grid();
    if dy.dims() != dims || dy.grid() != &grid {
        return Err(Error::InvalidArgument("output gradient does not match the input layout".into()));
    }
    let run = run_spmd(&grid, rank_inputs(x, params, Some(dy))?, |ctx, (xb, p, g)| {
        let (_, cache) = local::forward(ctx, layer, dims, &xb, &p)?;
        local::backward(ctx, layer, dims, &cache, &p, &g.expect("gradient supplied"))
    })?;
    let mut dx = BTreeMap::new();
    let mut grads = BTreeMap::new();
    for (c, (g, pg)) in run.outputs {
        dx.insert(c, g);
        grads.insert(c, pg);
    }
    Ok(LayerGrads {
        input: ActivationShard::from_blocks(dims, &grid, dx)?.combine()?,
        params: LayerParams::gather(&grid, &grads)?,
        stats: run.stats,
    })
}

/// Convenience wrapper: partition, run forward, reassemble.
pub fn forward_global(layer: Layer, dims: ModelDims, grid: &GridSpec, x: &Matrix, params: &LayerParams) -> Result<(Matrix, CommStats)> {
    let xs = ActivationShard::partition(x, dims, grid)?;
    let (y, stats) = layer_forward(layer, &xs, params)?;
    Ok((y.combine()?, stats))
}

/// Convenience wrapper around [`layer_backward`] for global matrices.
pub fn backward_global(
    layer: Layer,
    dims: ModelDims,
    grid: &GridSpec,
    x: &Matrix,
    params: &LayerParams,
    dy: &Matrix,
) -> Result<LayerGrads> {
    let xs = ActivationShard::partition(x, dims, grid)?;
    let dys = ActivationShard::partition(dy, dims, grid)?;
    layer_backward(layer, &xs, params, &dys)
}

//! A small stack of transformer blocks trained with plain SGD on the loss
//! `L = Σ(Y − T)² / (2N)`, `N = b·s·h`. Used to compare serial and
//! distributed training step by step.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{local, serial, Layer, LayerParams, ModelDims};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, GroupKind, RankCoord};
use crate::rng::random_matrix;
use crate::runtime::{run_spmd, CommStats, RankCtx};
use crate::tensor::{Matrix, ShardScheme, ShardedMatrix};

const INPUT_STREAM: u64 = 1 << 20;
const TARGET_STREAM: u64 = INPUT_STREAM + 1;
const STREAMS_PER_BLOCK: u64 = 16;

fn default_layers() -> usize {
    2
}
fn default_steps() -> usize {
    50
}
fn default_lr() -> f64 {
    0.05
}

/// Toy model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub b: usize,
    pub s: usize,
    pub h: usize,
    pub n: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub q: usize,
    pub d: usize,
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            b: 4,
            s: 4,
            h: 8,
            n: 2,
            layers: default_layers(),
            q: 2,
            d: 2,
            seed: 0,
            steps: default_steps(),
            lr: default_lr(),
        }
    }
}

impl ToyConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims::new(self.b, self.s, self.h, self.n)
    }
}

/// Seeded parameters, input and target.
#[derive(Clone, Debug)]
pub struct ToyModel {
    pub dims: ModelDims,
    pub params: Vec<LayerParams>,
    pub input: Matrix,
    pub target: Matrix,
}

fn loss_scale(dims: ModelDims) -> f64 {
    1.0 / (dims.rows() * dims.h) as f64
}

fn sum_squares(m: &Matrix) -> f64 {
    m.data().iter().map(|v| v * v).sum()
}

impl ToyModel {
    pub fn new(dims: ModelDims, layers: usize, seed: u64) -> Self {
        let params = (0..layers as u64)
            .map(|l| LayerParams::random(dims.h, seed, l * STREAMS_PER_BLOCK))
            .collect();
        ToyModel {
            dims,
            params,
            input: random_matrix(seed, INPUT_STREAM, dims.rows(), dims.h),
            target: random_matrix(seed, TARGET_STREAM, dims.rows(), dims.h),
        }
    }

    pub fn from_config(cfg: &ToyConfig) -> Self {
        ToyModel::new(cfg.dims(), cfg.layers, cfg.seed)
    }

    pub fn forward_serial(&self, params: &[LayerParams]) -> Result<Matrix> {
        let mut y = self.input.clone();
        for p in params {
            y = serial::forward(Layer::Block, self.dims, &y, p)?;
        }
        Ok(y)
    }

    pub fn loss_serial(&self, params: &[LayerParams]) -> Result<f64> {
        let r = self.forward_serial(params)?.sub(&self.target)?;
        Ok(0.5 * loss_scale(self.dims) * sum_squares(&r))
    }

    /// Loss and parameter gradients, serially.
    pub fn grads_serial(&self, params: &[LayerParams]) -> Result<(f64, Vec<LayerParams>)> {
        let mut acts = vec![self.input.clone()];
        for p in params {
            let y = serial::forward(Layer::Block, self.dims, acts.last().expect("nonempty"), p)?;
            acts.push(y);
        }
        let r = acts.last().expect("nonempty").sub(&self.target)?;
        let loss = 0.5 * loss_scale(self.dims) * sum_squares(&r);
        let mut dy = r.scale(loss_scale(self.dims));
        let mut grads = vec![None; params.len()];
        for l in (0..params.len()).rev() {
            let (dx, g) = serial::backward(Layer::Block, self.dims, &acts[l], &params[l], &dy)?;
            grads[l] = Some(g);
            dy = dx;
        }
        Ok((loss, grads.into_iter().map(|g| g.expect("filled")).collect()))
    }

    pub fn train_serial(&self, steps: usize, lr: f64) -> Result<(Vec<f64>, Vec<LayerParams>)> {
        let mut params = self.params.clone();
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (loss, grads) = self.grads_serial(&params)?;
            for (p, g) in params.iter_mut().zip(&grads) {
                p.sgd_step(g, lr)?;
            }
            losses.push(loss);
        }
        Ok((losses, params))
    }

    fn rank_inputs(&self, grid: &GridSpec) -> Result<BTreeMap<RankCoord, RankState>> {
        self.dims.check(grid)?;
        let x = ShardedMatrix::partition(&self.input, ShardScheme::TesseractA, grid)?;
        let t = ShardedMatrix::partition(&self.target, ShardScheme::TesseractA, grid)?;
        let mut inputs = BTreeMap::new();
        for c in grid.coords() {
            let params = self.params.iter().map(|p| p.shard(grid, c)).collect::<Result<_>>()?;
            inputs.insert(
                c,
                RankState {
                    x: x.block(c).ok_or(Error::MissingBlock(c))?.clone(),
                    t: t.block(c).ok_or(Error::MissingBlock(c))?.clone(),
                    params,
                },
            );
        }
        Ok(inputs)
    }

    /// Loss and gathered parameter gradients computed on `grid`.
    pub fn grads_distributed(&self, grid: &GridSpec) -> Result<(f64, Vec<LayerParams>, CommStats)> {
        let dims = self.dims;
        let run = run_spmd(grid, self.rank_inputs(grid)?, |ctx, st| rank_step(ctx, dims, &st))?;
        let loss = replicated_value(run.outputs.values().map(|(l, _)| *l))?;
        let mut grads = Vec::with_capacity(self.params.len());
        for l in 0..self.params.len() {
            let shards = run.outputs.iter().map(|(c, (_, g))| (*c, g[l].clone())).collect();
            grads.push(LayerParams::gather(grid, &shards)?);
        }
        Ok((loss, grads, run.stats))
    }

    pub fn train_distributed(&self, grid: &GridSpec, steps: usize, lr: f64) -> Result<(Vec<f64>, Vec<LayerParams>, CommStats)> {
        let dims = self.dims;
        let run = run_spmd(grid, self.rank_inputs(grid)?, |ctx, mut st| {
            let mut losses = Vec::with_capacity(steps);
            for _ in 0..steps {
                let (loss, grads) = rank_step(ctx, dims, &st)?;
                for (p, g) in st.params.iter_mut().zip(&grads) {
                    p.sgd_step(g, lr)?;
                }
                losses.push(loss);
            }
            Ok((losses, st.params))
        })?;
        let mut losses = Vec::with_capacity(steps);
        for s in 0..steps {
            losses.push(replicated_value(run.outputs.values().map(|(l, _)| l[s]))?);
        }
        let mut params = Vec::with_capacity(self.params.len());
        for l in 0..self.params.len() {
            let shards = run.outputs.iter().map(|(c, (_, p))| (*c, p[l].clone())).collect();
            params.push(LayerParams::gather(grid, &shards)?);
        }
        Ok((losses, params, run.stats))
    }
}

struct RankState {
    x: Matrix,
    t: Matrix,
    params: Vec<LayerParams>,
}

fn replicated_value(mut values: impl Iterator<Item = f64>) -> Result<f64> {
    let first = values.next().ok_or_else(|| Error::InvalidArgument("empty grid".into()))?;
    if values.any(|v| v.to_bits() != first.to_bits()) {
        return Err(Error::InvalidArgument("ranks disagree on the loss".into()));
    }
    Ok(first)
}

fn global_sum(ctx: &mut RankCtx<'_>, v: f64) -> Result<f64> {
    let mut m = Matrix::from_vec(1, 1, vec![v])?;
    for kind in [GroupKind::Row, GroupKind::Column, GroupKind::Depth] {
        m = ctx.all_reduce(kind, &m)?;
    }
    Ok(m.get(0, 0))
}

fn rank_step(ctx: &mut RankCtx<'_>, dims: ModelDims, st: &RankState) -> Result<(f64, Vec<LayerParams>)> {
    let mut y = st.x.clone();
    let mut caches = Vec::with_capacity(st.params.len());
    for p in &st.params {
        let (next, cache) = local::forward(ctx, Layer::Block, dims, &y, p)?;
        caches.push(cache);
        y = next;
    }
    let r = y.sub(&st.t)?;
    let loss = 0.5 * loss_scale(dims) * global_sum(ctx, sum_squares(&r))?;
    let mut dy = r.scale(loss_scale(dims));
    let mut grads = vec![None; st.params.len()];
    for l in (0..st.params.len()).rev() {
        let (dx, g) = local::backward(ctx, Layer::Block, dims, &caches[l], &st.params[l], &dy)?;
        grads[l] = Some(g);
        dy = dx;
    }
    Ok((loss, grads.into_iter().map(|g| g.expect("filled")).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyStep {
    pub step: usize,
    pub serial_loss: f64,
    pub distributed_loss: f64,
    pub divergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub config: ToyConfig,
    pub steps: Vec<ToyStep>,
    pub max_divergence: f64,
    /// Whether every distributed loss has the same bit pattern as its serial
    /// counterpart.
    pub bitwise_identical: bool,
    pub stats: CommStats,
}

impl ToyReport {
    pub const CSV_HEADER: &'static str = "step,serial_loss,distributed_loss,divergence";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", s.step, s.serial_loss, s.distributed_loss, s.divergence);
        }
        out
    }
}

/// Trains the same seeded model serially and on the configured grid.
pub fn paired_training(cfg: &ToyConfig, allow_d_gt_q: bool) -> Result<ToyReport> {
    let grid = GridSpec::with_depth_override(cfg.q, cfg.d, allow_d_gt_q)?;
    let model = ToyModel::from_config(cfg);
    model.dims.check(&grid)?;
    let (serial_losses, _) = model.train_serial(cfg.steps, cfg.lr)?;
    let (dist_losses, _, stats) = model.train_distributed(&grid, cfg.steps, cfg.lr)?;
    let steps: Vec<ToyStep> = serial_losses
        .iter()
        .zip(&dist_losses)
        .enumerate()
        .map(|(step, (&s, &d))| ToyStep {
            step,
            serial_loss: s,
            distributed_loss: d,
            divergence: (s - d).abs(),
        })
        .collect();
    Ok(ToyReport {
        config: cfg.clone(),
        max_divergence: steps.iter().map(|s| s.divergence).fold(0.0, f64::max),
        bitwise_identical: steps.iter().all(|s| s.serial_loss.to_bits() == s.distributed_loss.to_bits()),
        steps,
        stats,
    })
}

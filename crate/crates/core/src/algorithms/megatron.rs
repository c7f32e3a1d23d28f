use crate::error::{Error, Result};
use crate::grid::{GridSpec, GroupKind};
use crate::runtime::{inputs_from, run_spmd, CommStats};
use crate::tensor::{Matrix, ShardScheme, ShardedMatrix};

/// 1-D tensor-parallel pair of linear layers, `X·W1·W2`.
///
/// `W1` is split by columns and `W2` by rows over `p` ranks, `X` is
/// replicated; each rank forms its partial product and one all-reduce sums
/// them. Runs on the `[1, 1, p]` layout, so the depth group is the 1-D
/// communicator.
pub fn megatron_1d_linear(x: &Matrix, w1: &Matrix, w2: &Matrix, p: usize) -> Result<(Matrix, CommStats)> {
    if x.cols() != w1.rows() {
        return Err(Error::ShapeMismatch { op: "megatron X·W1", left: x.shape(), right: w1.shape() });
    }
    if w1.cols() != w2.rows() {
        return Err(Error::ShapeMismatch { op: "megatron W1·W2", left: w1.shape(), right: w2.shape() });
    }
    let grid = GridSpec::linear(p)?;
    let s1 = ShardedMatrix::partition(w1, ShardScheme::Column1D, &grid)?;
    let s2 = ShardedMatrix::partition(w2, ShardScheme::Row1D, &grid)?;
    let inputs = inputs_from(&grid, |c| (s1.block(c).unwrap().clone(), s2.block(c).unwrap().clone()));
    let run = run_spmd(&grid, inputs, |ctx, (w1, w2)| {
        let partial = x.matmul(&w1)?.matmul(&w2)?;
        ctx.all_reduce(GroupKind::Depth, &partial)
    })?;
    let out = ShardedMatrix::from_blocks((x.rows(), w2.cols()), ShardScheme::Replicated, &grid, run.outputs)?;
    Ok((out.combine()?, run.stats))
}

use crate::error::{Error, Result};
use crate::grid::{GridSpec, GroupKind};
use crate::runtime::{inputs_from, run_spmd, CommStats, RankCtx};
use crate::tensor::{Matrix, ShardScheme, ShardedMatrix};

pub(super) fn check_inner(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// SUMMA on a `[q, q]` grid: `q` outer-product steps, step `t` broadcasting
/// `A_it` along row `i` and `B_tj` along column `j`.
pub fn summa_matmul(a: &Matrix, b: &Matrix, q: usize) -> Result<(Matrix, CommStats)> {
    let grid = GridSpec::new(q, 1)?;
    check_inner(a, b)?;
    let sa = ShardedMatrix::partition(a, ShardScheme::Summa2D, &grid)?;
    let sb = ShardedMatrix::partition(b, ShardScheme::Summa2D, &grid)?;
    let inputs = inputs_from(&grid, |c| (sa.block(c).unwrap().clone(), sb.block(c).unwrap().clone()));
    let run = run_spmd(&grid, inputs, |ctx, (a, b)| summa_local(ctx, &a, &b))?;
    let out = ShardedMatrix::from_blocks((a.rows(), b.cols()), ShardScheme::Summa2D, &grid, run.outputs)?;
    Ok((out.combine()?, run.stats))
}

/// Per-rank SUMMA body. `a` and `b` are this rank's blocks; returns `C_ij`.
pub fn summa_local(ctx: &mut RankCtx<'_>, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let q = ctx.grid().q();
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for t in 0..q {
        let a_it = ctx.broadcast(GroupKind::Row, t, Some(a))?;
        let b_tj = ctx.broadcast(GroupKind::Column, t, Some(b))?;
        c.add_assign(&a_it.matmul(&b_tj)?)?;
    }
    Ok(c)
}

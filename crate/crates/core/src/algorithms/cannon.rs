use crate::error::Result;
use crate::grid::{GridSpec, GroupKind};
use crate::runtime::{inputs_from, run_spmd, CommStats, RankCtx};
use crate::tensor::{Matrix, ShardScheme, ShardedMatrix};

/// Cannon's algorithm on a `[q, q]` grid.
///
/// After the initial skew (row `i` of `A` rotated left by `i`, column `j` of
/// `B` rotated up by `j`, both modulo `q`) each rank multiplies its pair and
/// passes `A` left and `B` up by one, `q` products in total.
pub fn cannon_matmul(a: &Matrix, b: &Matrix, q: usize) -> Result<(Matrix, CommStats)> {
    let grid = GridSpec::new(q, 1)?;
    super::summa::check_inner(a, b)?;
    let sa = ShardedMatrix::partition(a, ShardScheme::Summa2D, &grid)?;
    let sb = ShardedMatrix::partition(b, ShardScheme::Summa2D, &grid)?;
    let inputs = inputs_from(&grid, |c| (sa.block(c).unwrap().clone(), sb.block(c).unwrap().clone()));
    let run = run_spmd(&grid, inputs, |ctx, (a, b)| cannon_local(ctx, a, b))?;
    let out = ShardedMatrix::from_blocks((a.rows(), b.cols()), ShardScheme::Summa2D, &grid, run.outputs)?;
    Ok((out.combine()?, run.stats))
}

fn cannon_local(ctx: &mut RankCtx<'_>, a: Matrix, b: Matrix) -> Result<Matrix> {
    let c = ctx.coord();
    let q = ctx.grid().q();
    let mut a = ctx.shift(GroupKind::Row, c.i as isize, a)?;
    let mut b = ctx.shift(GroupKind::Column, c.j as isize, b)?;
    let mut acc = Matrix::zeros(a.rows(), b.cols());
    for t in 0..q {
        acc.add_assign(&a.matmul(&b)?)?;
        if t + 1 < q {
            a = ctx.shift(GroupKind::Row, 1, a)?;
            b = ctx.shift(GroupKind::Column, 1, b)?;
        }
    }
    Ok(acc)
}

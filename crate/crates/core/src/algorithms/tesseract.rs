//! Tesseract matrix multiplication on a `[q, q, d]` grid.
//!
//! Operand layouts:
//!
//! | variant | left operand      | right operand     | result            |
//! |---------|-------------------|-------------------|-------------------|
//! | NN      | `A [a,b]` TesseractA | `B [b,c]` TesseractB | `AB` TesseractA |
//! | NT      | `A [a,c]` TesseractA | `B [b,c]` TesseractB | `ABᵀ` TesseractA |
//! | TN      | `A [a,b]` TesseractA | `B [a,c]` TesseractA | `AᵀB` TesseractB |
//!
//! Each depth layer runs its own `[q, q]` SUMMA-style loop. NN never talks
//! across layers. NT reduces its partial products over the row group. TN
//! reduces over the column group and then all-reduces over the depth group,
//! because every layer only sees its own `a/d` rows of the left operand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, GroupKind};
use crate::runtime::{run_spmd, CommStats, RankCtx};
use crate::tensor::{Matrix, ShardScheme, ShardedMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatmulVariant {
    /// `C = A·B`
    NN,
    /// `C = A·Bᵀ`
    NT,
    /// `C = Aᵀ·B`
    TN,
}

impl MatmulVariant {
    pub const ALL: [MatmulVariant; 3] = [MatmulVariant::NN, MatmulVariant::NT, MatmulVariant::TN];

    pub fn schemes(&self) -> (ShardScheme, ShardScheme, ShardScheme) {
        use ShardScheme::{TesseractA as A, TesseractB as B};
        match self {
            MatmulVariant::NN => (A, B, A),
            MatmulVariant::NT => (A, B, A),
            MatmulVariant::TN => (A, A, B),
        }
    }

    /// Global result shape, or a shape error if the operands do not fit.
    pub fn output_shape(&self, left: (usize, usize), right: (usize, usize)) -> Result<(usize, usize)> {
        let ok = match self {
            MatmulVariant::NN => left.1 == right.0,
            MatmulVariant::NT => left.1 == right.1,
            MatmulVariant::TN => left.0 == right.0,
        };
        if !ok {
            return Err(Error::ShapeMismatch {
                op: self.as_str(),
                left,
                right,
            });
        }
        Ok(match self {
            MatmulVariant::NN => (left.0, right.1),
            MatmulVariant::NT => (left.0, right.0),
            MatmulVariant::TN => (left.1, right.1),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MatmulVariant::NN => "nn",
            MatmulVariant::NT => "nt",
            MatmulVariant::TN => "tn",
        }
    }

    /// The serial reference with the same semantics.
    pub fn serial(&self, left: &Matrix, right: &Matrix) -> Result<Matrix> {
        match self {
            MatmulVariant::NN => left.matmul(right),
            MatmulVariant::NT => left.matmul(&right.transpose()),
            MatmulVariant::TN => left.transpose().matmul(right),
        }
    }
}

impl std::str::FromStr for MatmulVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(MatmulVariant::NN),
            "nt" => Ok(MatmulVariant::NT),
            "tn" => Ok(MatmulVariant::TN),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?} (nn, nt, tn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TesseractOptions {
    /// Charge one depth-group broadcast per TesseractB operand block instead
    /// of treating the replication as free setup.
    pub meter_initial_replication: bool,
}

/// Per-rank `C = A·B`. `a` is this rank's TesseractA block, `b` its
/// TesseractB block; returns the TesseractA block of `C`.
pub fn nn_local(ctx: &mut RankCtx<'_>, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let q = ctx.grid().q();
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for t in 0..q {
        let a_itk = ctx.broadcast(GroupKind::Row, t, Some(a))?;
        let b_tjk = ctx.broadcast(GroupKind::Column, t, Some(b))?;
        c.add_assign(&a_itk.matmul(&b_tjk)?)?;
    }
    Ok(c)
}

/// Per-rank `C = A·Bᵀ`. `a` is a TesseractA block of `[a, c]`, `b` a
/// TesseractB block of `[b, c]`; returns the TesseractA block of `[a, b]`.
pub fn nt_local(ctx: &mut RankCtx<'_>, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let q = ctx.grid().q();
    let j = ctx.coord().j;
    let mut out = None;
    for t in 0..q {
        let b_tjk = ctx.broadcast(GroupKind::Column, t, Some(b))?;
        let partial = a.matmul(&b_tjk.transpose())?;
        if let Some(sum) = ctx.reduce(GroupKind::Row, t, &partial)? {
            debug_assert_eq!(j, t);
            out = Some(sum);
        }
    }
    Ok(out.expect("every rank is the reduce root once"))
}

/// Per-rank `C = Aᵀ·B`. Both operands are TesseractA blocks sharing the row
/// dimension; returns the TesseractB block of the full product, identical on
/// every layer.
pub fn tn_local(ctx: &mut RankCtx<'_>, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let q = ctx.grid().q();
    let mut layer = None;
    for t in 0..q {
        let a_itk = ctx.broadcast(GroupKind::Row, t, Some(a))?;
        let partial = a_itk.transpose().matmul(b)?;
        if let Some(sum) = ctx.reduce(GroupKind::Column, t, &partial)? {
            layer = Some(sum);
        }
    }
    let layer = layer.expect("every rank is the reduce root once");
    ctx.all_reduce(GroupKind::Depth, &layer)
}

/// Copies a TesseractB block from layer 0 to the rest of its depth group.
pub fn replicate_over_depth(ctx: &mut RankCtx<'_>, b: &Matrix) -> Result<Matrix> {
    let root = ctx.coord().k == 0;
    ctx.broadcast(GroupKind::Depth, 0, root.then_some(b))
}

/// Per-rank dispatch over the variants.
pub fn variant_local(
    ctx: &mut RankCtx<'_>,
    variant: MatmulVariant,
    left: &Matrix,
    right: &Matrix,
    opts: TesseractOptions,
) -> Result<Matrix> {
    match variant {
        MatmulVariant::NN | MatmulVariant::NT => {
            let replicated;
            let right = if opts.meter_initial_replication {
                replicated = replicate_over_depth(ctx, right)?;
                &replicated
            } else {
                right
            };
            if variant == MatmulVariant::NN {
                nn_local(ctx, left, right)
            } else {
                nt_local(ctx, left, right)
            }
        }
        MatmulVariant::TN => tn_local(ctx, left, right),
    }
}

fn expect_layout(m: &ShardedMatrix, scheme: ShardScheme, role: &str) -> Result<()> {
    if m.scheme() != scheme {
        return Err(Error::InvalidArgument(format!(
            "{role} must be {scheme:?}-partitioned, got {:?}",
            m.scheme()
        )));
    }
    Ok(())
}

/// Runs a Tesseract product on already-partitioned operands.
pub fn tesseract_matmul_sharded(
    left: &ShardedMatrix,
    right: &ShardedMatrix,
    variant: MatmulVariant,
    opts: TesseractOptions,
) -> Result<(ShardedMatrix, CommStats)> {
    let grid = *left.grid();
    if *right.grid() != grid {
        return Err(Error::InvalidArgument(format!(
            "operands live on different grids {} and {}",
            grid,
            right.grid()
        )));
    }
    let (ls, rs, out_scheme) = variant.schemes();
    expect_layout(left, ls, "left operand")?;
    expect_layout(right, rs, "right operand")?;
    let out_shape = variant.output_shape(left.global_shape(), right.global_shape())?;
    out_scheme.block_shape(&grid, out_shape)?;

    let mut inputs = Vec::with_capacity(grid.p());
    for c in grid.coords() {
        let l = left.block(c).ok_or(Error::MissingBlock(c))?;
        let r = right.block(c).ok_or(Error::MissingBlock(c))?;
        inputs.push((c, (l, r)));
    }
    let run = run_spmd(&grid, inputs.into_iter().collect(), |ctx, (l, r)| {
        variant_local(ctx, variant, l, r, opts)
    })?;
    let out = ShardedMatrix::from_blocks(out_shape, out_scheme, &grid, run.outputs)?;
    Ok((out, run.stats))
}

/// Partitions global operands, multiplies on `grid` and reassembles.
pub fn tesseract_matmul(
    left: &Matrix,
    right: &Matrix,
    grid: &GridSpec,
    variant: MatmulVariant,
    opts: TesseractOptions,
) -> Result<(Matrix, CommStats)> {
    variant.output_shape(left.shape(), right.shape())?;
    let (ls, rs, _) = variant.schemes();
    let l = ShardedMatrix::partition(left, ls, grid)?;
    let r = ShardedMatrix::partition(right, rs, grid)?;
    let (out, stats) = tesseract_matmul_sharded(&l, &r, variant, opts)?;
    Ok((out.combine()?, stats))
}

/// Gradients of `C = A·B`: `A′ = C′·Bᵀ` through the NT kernel and
/// `B′ = Aᵀ·C′` through the TN kernel, whose depth all-reduce leaves every
/// replica of `B′` holding the full gradient.
pub fn tesseract_backward(
    grad_c: &ShardedMatrix,
    a: &ShardedMatrix,
    b: &ShardedMatrix,
) -> Result<(ShardedMatrix, ShardedMatrix, CommStats)> {
    let grid = *a.grid();
    expect_layout(grad_c, ShardScheme::TesseractA, "output gradient")?;
    expect_layout(a, ShardScheme::TesseractA, "A")?;
    expect_layout(b, ShardScheme::TesseractB, "B")?;
    if grad_c.grid() != &grid || b.grid() != &grid {
        return Err(Error::InvalidArgument("operands live on different grids".into()));
    }
    let c_shape = MatmulVariant::NN.output_shape(a.global_shape(), b.global_shape())?;
    if grad_c.global_shape() != c_shape {
        return Err(Error::ShapeMismatch {
            op: "tesseract_backward",
            left: c_shape,
            right: grad_c.global_shape(),
        });
    }

    let mut inputs = Vec::with_capacity(grid.p());
    for c in grid.coords() {
        let blocks = (
            grad_c.block(c).ok_or(Error::MissingBlock(c))?,
            a.block(c).ok_or(Error::MissingBlock(c))?,
            b.block(c).ok_or(Error::MissingBlock(c))?,
        );
        inputs.push((c, blocks));
    }
    let run = run_spmd(&grid, inputs.into_iter().collect(), |ctx, (gc, a, b)| {
        let grad_a = nt_local(ctx, gc, b)?;
        let grad_b = tn_local(ctx, a, gc)?;
        Ok((grad_a, grad_b))
    })?;
    let mut grad_a = std::collections::BTreeMap::new();
    let mut grad_b = std::collections::BTreeMap::new();
    for (c, (ga, gb)) in run.outputs {
        grad_a.insert(c, ga);
        grad_b.insert(c, gb);
    }
    let grad_a = ShardedMatrix::from_blocks(a.global_shape(), ShardScheme::TesseractA, &grid, grad_a)?;
    let grad_b = ShardedMatrix::from_blocks(b.global_shape(), ShardScheme::TesseractB, &grid, grad_b)?;
    Ok((grad_a, grad_b, run.stats))
}

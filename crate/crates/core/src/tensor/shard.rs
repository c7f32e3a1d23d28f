use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, RankCoord};

/// How a global matrix is laid out over the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardScheme {
    /// `dq²` blocks `[rows/(qd), cols/q]`; rank `(i,j,k)` holds block-row
    /// `i + k·q`, block-column `j`.
    TesseractA,
    /// `q²` blocks `[rows/q, cols/q]`; block `(i,j)` is replicated over depth.
    TesseractB,
    /// `q²` blocks `[rows/q, cols/q]` on a single-layer grid.
    Summa2D,
    /// Rank `r` (linear order) holds column block `r` of width `cols/p`.
    Column1D,
    /// Rank `r` (linear order) holds row block `r` of height `rows/p`.
    Row1D,
    /// Every rank holds the whole matrix.
    Replicated,
}

impl ShardScheme {
    pub const ALL: [ShardScheme; 6] = [
        ShardScheme::TesseractA,
        ShardScheme::TesseractB,
        ShardScheme::Summa2D,
        ShardScheme::Column1D,
        ShardScheme::Row1D,
        ShardScheme::Replicated,
    ];

    fn requires_single_layer(&self) -> bool {
        matches!(self, ShardScheme::Summa2D)
    }

    fn is_replicated(&self) -> bool {
        matches!(self, ShardScheme::TesseractB | ShardScheme::Replicated)
    }

    /// `(row_divisor, col_divisor)` for this scheme on `grid`.
    pub fn divisors(&self, grid: &GridSpec) -> (usize, usize) {
        let (q, d, p) = (grid.q(), grid.d(), grid.p());
        match self {
            ShardScheme::TesseractA => (q * d, q),
            ShardScheme::TesseractB | ShardScheme::Summa2D => (q, q),
            ShardScheme::Column1D => (1, p),
            ShardScheme::Row1D => (p, 1),
            ShardScheme::Replicated => (1, 1),
        }
    }

    /// Shape of every block of a `(rows, cols)` matrix.
    pub fn block_shape(&self, grid: &GridSpec, (rows, cols): (usize, usize)) -> Result<(usize, usize)> {
        if self.requires_single_layer() && grid.d() != 1 {
            return Err(Error::InvalidArgument(format!(
                "{self:?} requires a single-layer grid, got {grid}"
            )));
        }
        let (rd, cd) = self.divisors(grid);
        if rows % rd != 0 {
            return Err(Error::divisibility(format!("{self:?} rows"), rows, rd));
        }
        if cols % cd != 0 {
            return Err(Error::divisibility(format!("{self:?} cols"), cols, cd));
        }
        Ok((rows / rd, cols / cd))
    }

    /// Top-left global position of the block owned by `c`.
    pub fn block_origin(&self, grid: &GridSpec, c: RankCoord, block: (usize, usize)) -> (usize, usize) {
        let (br, bc) = block;
        match self {
            ShardScheme::TesseractA => ((c.i + c.k * grid.q()) * br, c.j * bc),
            ShardScheme::TesseractB | ShardScheme::Summa2D => (c.i * br, c.j * bc),
            ShardScheme::Column1D => (0, rank_linear(grid, c) * bc),
            ShardScheme::Row1D => (rank_linear(grid, c) * br, 0),
            ShardScheme::Replicated => (0, 0),
        }
    }
}

fn rank_linear(grid: &GridSpec, c: RankCoord) -> usize {
    grid.rank_of(c).expect("coordinate from grid")
}

/// A global matrix split over the grid according to a [`ShardScheme`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShardedMatrix {
    global_shape: (usize, usize),
    scheme: ShardScheme,
    grid: GridSpec,
    blocks: BTreeMap<RankCoord, Matrix>,
}

impl ShardedMatrix {
    pub fn partition(m: &Matrix, scheme: ShardScheme, grid: &GridSpec) -> Result<Self> {
        let block = scheme.block_shape(grid, m.shape())?;
        let blocks = grid
            .coords()
            .map(|c| {
                let (r0, c0) = scheme.block_origin(grid, c, block);
                (c, m.block(r0, c0, block.0, block.1))
            })
            .collect();
        Ok(ShardedMatrix {
            global_shape: m.shape(),
            scheme,
            grid: *grid,
            blocks,
        })
    }

    /// Assembles a sharded matrix from per-rank blocks, checking every block
    /// shape against the scheme.
    pub fn from_blocks(
        global_shape: (usize, usize),
        scheme: ShardScheme,
        grid: &GridSpec,
        blocks: BTreeMap<RankCoord, Matrix>,
    ) -> Result<Self> {
        let expected = scheme.block_shape(grid, global_shape)?;
        for (c, b) in &blocks {
            if !grid.contains(*c) {
                return Err(Error::CoordOutOfRange {
                    coord: *c,
                    grid: grid.to_string(),
                });
            }
            if b.shape() != expected {
                return Err(Error::ShapeMismatch {
                    op: "from_blocks",
                    left: expected,
                    right: b.shape(),
                });
            }
        }
        Ok(ShardedMatrix {
            global_shape,
            scheme,
            grid: *grid,
            blocks,
        })
    }

    pub fn global_shape(&self) -> (usize, usize) {
        self.global_shape
    }

    pub fn scheme(&self) -> ShardScheme {
        self.scheme
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn block(&self, c: RankCoord) -> Option<&Matrix> {
        self.blocks.get(&c)
    }

    pub fn block_mut(&mut self, c: RankCoord) -> Option<&mut Matrix> {
        self.blocks.get_mut(&c)
    }

    pub fn blocks(&self) -> &BTreeMap<RankCoord, Matrix> {
        &self.blocks
    }

    pub fn into_blocks(self) -> BTreeMap<RankCoord, Matrix> {
        self.blocks
    }

    /// Reassembles the global matrix. Replicated blocks must agree exactly.
    pub fn combine(&self) -> Result<Matrix> {
        let block = self.scheme.block_shape(&self.grid, self.global_shape)?;
        let mut out = Matrix::zeros(self.global_shape.0, self.global_shape.1);
        let mut owner: BTreeMap<(usize, usize), RankCoord> = BTreeMap::new();
        for c in self.grid.coords() {
            let b = self.blocks.get(&c).ok_or(Error::MissingBlock(c))?;
            let origin = self.scheme.block_origin(&self.grid, c, block);
            if self.scheme.is_replicated() {
                if let Some(&first) = owner.get(&origin) {
                    if self.blocks[&first] != *b {
                        return Err(Error::ReplicaDivergence { coord: c, other: first });
                    }
                    continue;
                }
                owner.insert(origin, c);
            }
            out.set_block(origin.0, origin.1, b);
        }
        Ok(out)
    }
}

//! The `[q, q, d]` processor arrangement.
//!
//! Ranks are linearized depth-major, then by row, then by column:
//! `rank = k·q² + i·q + j`. Traces and per-rank statistics are keyed by this
//! order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tesseract dimension `q` and depth `d`; `p = d·q²` virtual processors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridSpec {
    q: usize,
    d: usize,
}

impl GridSpec {
    /// Builds a grid honoring `1 ≤ d ≤ q`.
    pub fn new(q: usize, d: usize) -> Result<Self> {
        Self::with_depth_override(q, d, false)
    }

    /// Builds a grid; `allow_d_gt_q` lifts the `d ≤ q` restriction.
    pub fn with_depth_override(q: usize, d: usize, allow_d_gt_q: bool) -> Result<Self> {
        if q == 0 || d == 0 {
            return Err(Error::InvalidGrid(format!(
                "q and d must be positive, got q={q}, d={d}"
            )));
        }
        if d > q && !allow_d_gt_q {
            return Err(Error::InvalidGrid(format!(
                "depth d={d} exceeds dimension q={q} (requires 1 <= d <= q)"
            )));
        }
        Ok(GridSpec { q, d })
    }

    /// The 1-D layout `[1, 1, p]` used by the column/row split baseline.
    pub fn linear(p: usize) -> Result<Self> {
        Self::with_depth_override(1, p, true)
    }

    /// Parses `"[q,q,d]"`, optionally allowing `d > q`.
    pub fn parse(input: &str, allow_d_gt_q: bool) -> Result<Self> {
        let (q, d) = parse_shape(input)?;
        Self::with_depth_override(q, d, allow_d_gt_q)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.d * self.q * self.q
    }

    /// The single `[q, q, 1]` layer of this grid.
    pub fn layer(&self) -> GridSpec {
        GridSpec { q: self.q, d: 1 }
    }

    pub fn contains(&self, c: RankCoord) -> bool {
        c.i < self.q && c.j < self.q && c.k < self.d
    }

    fn check(&self, c: RankCoord) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::CoordOutOfRange {
                coord: c,
                grid: self.to_string(),
            })
        }
    }

    pub fn rank_of(&self, c: RankCoord) -> Result<usize> {
        self.check(c)?;
        Ok(c.k * self.q * self.q + c.i * self.q + c.j)
    }

    pub fn coord_of(&self, rank: usize) -> Result<RankCoord> {
        if rank >= self.p() {
            return Err(Error::InvalidArgument(format!(
                "rank {rank} out of range for {self} (p = {})",
                self.p()
            )));
        }
        let qq = self.q * self.q;
        Ok(RankCoord {
            i: (rank % qq) / self.q,
            j: rank % self.q,
            k: rank / qq,
        })
    }

    /// Global block-row of the `A` shard held at `c`: `h = i + k·q`.
    pub fn a_block_row(&self, c: RankCoord) -> Result<usize> {
        self.check(c)?;
        Ok(c.i + c.k * self.q)
    }

    /// All coordinates in rank order.
    pub fn coords(&self) -> impl Iterator<Item = RankCoord> + '_ {
        (0..self.p()).map(move |r| {
            let qq = self.q * self.q;
            RankCoord::new((r % qq) / self.q, r % self.q, r / qq)
        })
    }

    pub fn group_size(&self, kind: GroupKind) -> usize {
        match kind {
            GroupKind::Row | GroupKind::Column => self.q,
            GroupKind::Depth => self.d,
        }
    }

    pub fn group_count(&self, kind: GroupKind) -> usize {
        self.p() / self.group_size(kind)
    }

    /// Identifier of the `kind` group containing `c`, dense in `0..group_count`.
    pub fn group_index(&self, c: RankCoord, kind: GroupKind) -> usize {
        match kind {
            GroupKind::Row => c.k * self.q + c.i,
            GroupKind::Column => c.k * self.q + c.j,
            GroupKind::Depth => c.i * self.q + c.j,
        }
    }

    pub fn group_of(&self, c: RankCoord, kind: GroupKind) -> Result<CommGroup> {
        self.check(c)?;
        let members = (0..self.group_size(kind))
            .map(|m| c.with_position(kind, m))
            .collect();
        Ok(CommGroup {
            kind,
            index: self.group_index(c, kind),
            members,
        })
    }

    /// Every group of one kind, ordered by group index.
    pub fn groups(&self, kind: GroupKind) -> Vec<CommGroup> {
        let mut groups: Vec<CommGroup> = Vec::with_capacity(self.group_count(kind));
        for c in self.coords() {
            if c.position_in(kind) == 0 {
                groups.push(self.group_of(c, kind).expect("coordinate from grid"));
            }
        }
        groups.sort_by_key(|g| g.index);
        groups
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{}]", self.q, self.q, self.d)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GridSpec::parse(s, false)
    }
}

fn parse_shape(input: &str) -> Result<(usize, usize)> {
    let fail = |position: usize, message: &str| Error::GridParse {
        input: input.to_string(),
        position,
        message: message.to_string(),
    };
    let bytes = input.as_bytes();
    let start = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .ok_or_else(|| fail(0, "empty grid string"))?;
    if bytes[start] != b'[' {
        return Err(fail(start, "expected '['"));
    }
    let mut pos = start + 1;
    let mut fields = Vec::with_capacity(3);
    loop {
        while pos < bytes.len() && bytes[pos] == b' ' {
            pos += 1;
        }
        let digits_start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if digits_start == pos {
            return Err(fail(pos, "expected a positive integer"));
        }
        let value: usize = input[digits_start..pos]
            .parse()
            .map_err(|_| fail(digits_start, "integer out of range"))?;
        fields.push((digits_start, value));
        while pos < bytes.len() && bytes[pos] == b' ' {
            pos += 1;
        }
        match bytes.get(pos) {
            Some(b',') => pos += 1,
            Some(b']') => {
                pos += 1;
                break;
            }
            Some(_) => return Err(fail(pos, "expected ',' or ']'")),
            None => return Err(fail(pos, "unterminated grid, expected ']'")),
        }
    }
    if !input[pos..].trim().is_empty() {
        return Err(fail(pos, "trailing characters after ']'"));
    }
    if fields.len() != 3 {
        return Err(fail(
            start,
            &format!("expected 3 fields [q,q,d], found {}", fields.len()),
        ));
    }
    let (_, q) = fields[0];
    let (pos_q2, q2) = fields[1];
    let (pos_d, d) = fields[2];
    if q2 != q {
        return Err(fail(pos_q2, "first two fields must be equal ([q,q,d])"));
    }
    if q == 0 {
        return Err(fail(fields[0].0, "q must be positive"));
    }
    if d == 0 {
        return Err(fail(pos_d, "d must be positive"));
    }
    Ok((q, d))
}

/// Position `(i, j, k)` of one virtual processor.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct RankCoord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl RankCoord {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        RankCoord { i, j, k }
    }

    /// Index of this rank inside its group of `kind`.
    pub fn position_in(&self, kind: GroupKind) -> usize {
        match kind {
            GroupKind::Row => self.j,
            GroupKind::Column => self.i,
            GroupKind::Depth => self.k,
        }
    }

    /// The member at `position` of this rank's `kind` group.
    pub fn with_position(&self, kind: GroupKind, position: usize) -> RankCoord {
        let mut c = *self;
        match kind {
            GroupKind::Row => c.j = position,
            GroupKind::Column => c.i = position,
            GroupKind::Depth => c.k = position,
        }
        c
    }
}

impl fmt::Display for RankCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.i, self.j, self.k)
    }
}

/// Communicator family. Row groups fix `(i, k)`, column groups fix `(j, k)`,
/// depth groups fix `(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Row,
    Column,
    Depth,
}

impl GroupKind {
    pub const ALL: [GroupKind; 3] = [GroupKind::Row, GroupKind::Column, GroupKind::Depth];

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupKind::Row => "row",
            GroupKind::Column => "column",
            GroupKind::Depth => "depth",
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommGroup {
    pub kind: GroupKind,
    pub index: usize,
    /// Members in ascending position order.
    pub members: Vec<RankCoord>,
}

impl CommGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, c: RankCoord) -> bool {
        self.members.contains(&c)
    }
}

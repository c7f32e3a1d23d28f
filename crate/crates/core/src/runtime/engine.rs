use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Condvar, Mutex, MutexGuard};

use super::stats::{CollectiveKind, CommStats};
use super::trace::TraceRecord;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, GroupKind, RankCoord};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Broadcast { root: usize },
    Reduce { root: usize },
    AllReduce,
    Shift { displacement: usize },
    Permute,
}

impl Op {
    fn kind(&self) -> CollectiveKind {
        match self {
            Op::Broadcast { .. } => CollectiveKind::Broadcast,
            Op::Reduce { .. } => CollectiveKind::Reduce,
            Op::AllReduce => CollectiveKind::AllReduce,
            Op::Shift { .. } => CollectiveKind::Shift,
            Op::Permute => CollectiveKind::Permute,
        }
    }

    fn root(&self) -> Option<usize> {
        match self {
            Op::Broadcast { root } | Op::Reduce { root } => Some(*root),
            _ => None,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Broadcast { root } => write!(f, "broadcast(root={root})"),
            Op::Reduce { root } => write!(f, "reduce(root={root})"),
            Op::AllReduce => write!(f, "all_reduce"),
            Op::Shift { displacement } => write!(f, "shift(displacement={displacement})"),
            Op::Permute => write!(f, "permute"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct SlotKey {
    kind: GroupKind,
    group: usize,
    seq: usize,
}

struct Deposit {
    block: Option<Matrix>,
    dest: usize,
}

struct Delivery {
    result: Result<Option<Matrix>, CompletionError>,
    sent_elements: u64,
    recv_elements: u64,
}

#[derive(Clone, Debug)]
enum CompletionError {
    Shape { left: (usize, usize), right: (usize, usize) },
    MissingRootBlock,
    NotPermutation,
}

impl CompletionError {
    fn to_error(&self, op: Op) -> Error {
        match self {
            CompletionError::Shape { left, right } => Error::ShapeMismatch {
                op: op.kind().as_str(),
                left: *left,
                right: *right,
            },
            CompletionError::MissingRootBlock => {
                Error::InvalidArgument(format!("{op}: root supplied no block"))
            }
            CompletionError::NotPermutation => {
                Error::InvalidArgument("permute: destinations are not a permutation".into())
            }
        }
    }
}

struct Slot {
    op: Op,
    opener: RankCoord,
    deposits: Vec<Option<Deposit>>,
    arrived: usize,
    outcome: Option<Vec<Option<Delivery>>>,
    remaining: usize,
}

#[derive(Clone, Debug)]
enum RankState {
    Running,
    Blocked(String),
    Done,
}

enum Abort {
    Deadlock(Vec<(RankCoord, String)>),
    Failed,
}

struct State {
    slots: HashMap<SlotKey, Slot>,
    ranks: Vec<RankState>,
    stats: CommStats,
    abort: Option<Abort>,
}

struct Shared {
    grid: GridSpec,
    state: Mutex<State>,
    wake: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn abort_error(state: &State) -> Option<Error> {
        match state.abort.as_ref()? {
            Abort::Deadlock(blocked) => Some(Error::Deadlock {
                blocked: blocked.clone(),
            }),
            Abort::Failed => Some(Error::Aborted),
        }
    }

    /// Declares a deadlock when no rank can make progress.
    fn check_deadlock(&self, state: &mut State) {
        if state.abort.is_some() {
            return;
        }
        let progressing = state
            .ranks
            .iter()
            .any(|s| matches!(s, RankState::Running));
        let blocked: Vec<(RankCoord, String)> = state
            .ranks
            .iter()
            .enumerate()
            .filter_map(|(r, s)| match s {
                RankState::Blocked(what) => Some((
                    self.grid.coord_of(r).expect("rank in grid"),
                    what.clone(),
                )),
                _ => None,
            })
            .collect();
        if !progressing && !blocked.is_empty() {
            state.abort = Some(Abort::Deadlock(blocked));
            self.wake.notify_all();
        }
    }

    fn finish(&self, rank: usize, failed: bool) {
        let mut state = self.lock();
        state.ranks[rank] = RankState::Done;
        if failed && state.abort.is_none() {
            state.abort = Some(Abort::Failed);
        }
        self.check_deadlock(&mut state);
        self.wake.notify_all();
    }
}

/// Marks a rank finished even if its program panics.
struct FinishGuard<'a> {
    shared: &'a Shared,
    rank: usize,
    failed: bool,
}

impl Drop for FinishGuard<'_> {
    fn drop(&mut self) {
        self.shared
            .finish(self.rank, self.failed || std::thread::panicking());
    }
}

/// Per-rank handle passed to an SPMD program. All cross-rank interaction
/// goes through its collectives, which block until every member of the group
/// has made the matching call.
pub struct RankCtx<'a> {
    coord: RankCoord,
    rank: usize,
    grid: GridSpec,
    shared: &'a Shared,
    step: usize,
    seq: [usize; 3],
    trace: Option<Vec<TraceRecord>>,
}

impl RankCtx<'_> {
    pub fn coord(&self) -> RankCoord {
        self.coord
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of collectives this rank has issued so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Copies the block held by group member `root` to every member. Only
    /// the root's `block` is read.
    pub fn broadcast(&mut self, kind: GroupKind, root: usize, block: Option<&Matrix>) -> Result<Matrix> {
        let block = if self.coord.position_in(kind) == root {
            block.cloned()
        } else {
            None
        };
        self.collective(kind, Op::Broadcast { root }, block, 0)
            .map(|m| m.expect("broadcast delivers to every member"))
    }

    /// Elementwise sum delivered to member `root`; other members get `None`.
    pub fn reduce(&mut self, kind: GroupKind, root: usize, block: &Matrix) -> Result<Option<Matrix>> {
        self.collective(kind, Op::Reduce { root }, Some(block.clone()), 0)
    }

    /// Elementwise sum delivered to every member.
    pub fn all_reduce(&mut self, kind: GroupKind, block: &Matrix) -> Result<Matrix> {
        self.collective(kind, Op::AllReduce, Some(block.clone()), 0)
            .map(|m| m.expect("all_reduce delivers to every member"))
    }

    /// Cyclic shift: member `m` receives the block of member
    /// `(m + displacement) mod g`. A displacement of 1 moves every block one
    /// position towards lower indices.
    pub fn shift(&mut self, kind: GroupKind, displacement: isize, block: Matrix) -> Result<Matrix> {
        let g = self.grid.group_size(kind) as isize;
        let displacement = displacement.rem_euclid(g) as usize;
        self.collective(kind, Op::Shift { displacement }, Some(block), 0)
            .map(|m| m.expect("shift delivers to every member"))
    }

    /// Point-to-point exchange: this rank's block goes to member `dest`; the
    /// destinations of the whole group must form a permutation.
    pub fn send_recv(&mut self, kind: GroupKind, dest: usize, block: Matrix) -> Result<Matrix> {
        self.collective(kind, Op::Permute, Some(block), dest)
            .map(|m| m.expect("permute delivers to every member"))
    }

    fn record(&mut self, kind: GroupKind, op: Op, sent: u64, recv: u64) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                rank: self.rank,
                step: self.step,
                kind: op.kind(),
                group: kind,
                group_index: self.grid.group_index(self.coord, kind),
                root: op.root(),
                sent_bytes: sent * 8,
                recv_bytes: recv * 8,
            });
        }
    }

    fn collective(&mut self, kind: GroupKind, op: Op, block: Option<Matrix>, dest: usize) -> Result<Option<Matrix>> {
        let size = self.grid.group_size(kind);
        let pos = self.coord.position_in(kind);
        let result = if op.root().is_some_and(|r| r >= size) {
            Err(Error::InvalidArgument(format!(
                "{op}: root outside {kind} group of size {size}"
            )))
        } else if size == 1 {
            let deposit = Deposit { block, dest };
            let mut deliveries = complete(op, vec![deposit], &[self.rank], None);
            let d = deliveries.pop().expect("one delivery");
            self.record(kind, op, 0, 0);
            d.result.map_err(|e| e.to_error(op))
        } else {
            self.rendezvous(kind, op, size, pos, Deposit { block, dest })
        };
        let step = self.step;
        self.step += 1;
        result.map_err(|e| match e {
            e @ (Error::Aborted | Error::Deadlock { .. } | Error::CollectiveMismatch { .. }) => e,
            other => Error::RankFailed {
                coord: self.coord,
                step,
                source: Box::new(other),
            },
        })
    }

    fn rendezvous(&mut self, kind: GroupKind, op: Op, size: usize, pos: usize, deposit: Deposit) -> Result<Option<Matrix>> {
        let kind_idx = kind as usize;
        let key = SlotKey {
            kind,
            group: self.grid.group_index(self.coord, kind),
            seq: self.seq[kind_idx],
        };
        self.seq[kind_idx] += 1;

        let shared = self.shared;
        let mut state = shared.lock();
        if let Some(err) = Shared::abort_error(&state) {
            return Err(err);
        }
        let State { slots, ranks, stats, .. } = &mut *state;
        let slot = slots.entry(key).or_insert_with(|| Slot {
            op,
            opener: self.coord,
            deposits: (0..size).map(|_| None).collect(),
            arrived: 0,
            outcome: None,
            remaining: size,
        });
        if slot.op != op {
            let err = Error::CollectiveMismatch {
                coord: self.coord,
                step: self.step,
                expected: format!(
                    "{kind} group {} call #{}: {} (opened by {})",
                    key.group, key.seq, slot.op, slot.opener
                ),
                found: op.to_string(),
            };
            state.abort = Some(Abort::Failed);
            shared.wake.notify_all();
            return Err(err);
        }
        slot.deposits[pos] = Some(deposit);
        slot.arrived += 1;
        if slot.arrived == size {
            let members: Vec<usize> = (0..size)
                .map(|m| {
                    self.grid
                        .rank_of(self.coord.with_position(kind, m))
                        .expect("member in grid")
                })
                .collect();
            let deposits = slot
                .deposits
                .iter_mut()
                .map(|d| d.take().expect("all members deposited"))
                .collect();
            slot.outcome = Some(
                complete(op, deposits, &members, Some(stats))
                    .into_iter()
                    .map(Some)
                    .collect(),
            );
            for &r in &members {
                ranks[r] = RankState::Running;
            }
            shared.wake.notify_all();
        } else {
            ranks[self.rank] = RankState::Blocked(format!(
                "{kind} group {} call #{} {op}",
                key.group, key.seq
            ));
            shared.check_deadlock(&mut state);
        }

        loop {
            if let Some(slot) = state.slots.get_mut(&key) {
                if let Some(outcome) = slot.outcome.as_mut() {
                    let delivery = outcome[pos].take().expect("delivery taken once");
                    slot.remaining -= 1;
                    if slot.remaining == 0 {
                        state.slots.remove(&key);
                    }
                    drop(state);
                    self.record(kind, op, delivery.sent_elements, delivery.recv_elements);
                    return delivery.result.map_err(|e| e.to_error(op));
                }
            }
            if let Some(err) = Shared::abort_error(&state) {
                return Err(err);
            }
            state = shared.wake.wait(state).unwrap_or_else(|p| p.into_inner());
        }
    }
}

/// Resolves a collective once every member has deposited. Sums run in
/// ascending member order so results do not depend on arrival order.
fn complete(op: Op, mut deposits: Vec<Deposit>, members: &[usize], mut stats: Option<&mut CommStats>) -> Vec<Delivery> {
    let g = deposits.len();
    let mut sent = vec![0u64; g];
    let mut recv = vec![0u64; g];
    let mut transfer = |from: usize, to: usize, elements: usize, stats: &mut Option<&mut CommStats>| {
        sent[from] += elements as u64;
        recv[to] += elements as u64;
        if let Some(s) = stats.as_deref_mut() {
            s.record_transfer(op.kind(), members[from], members[to], elements);
        }
    };
    if g > 1 {
        if let Some(s) = stats.as_deref_mut() {
            s.record_call(op.kind());
        }
    }

    let results: std::result::Result<Vec<Option<Matrix>>, CompletionError> = (|| {
        let sum = |deposits: &mut [Deposit]| -> std::result::Result<Matrix, CompletionError> {
            let mut acc = deposits[0].block.take().expect("reduce contribution");
            for d in deposits[1..].iter_mut() {
                let b = d.block.take().expect("reduce contribution");
                if b.shape() != acc.shape() {
                    return Err(CompletionError::Shape {
                        left: acc.shape(),
                        right: b.shape(),
                    });
                }
                acc.add_assign(&b).expect("shape checked");
            }
            Ok(acc)
        };
        match op {
            Op::Broadcast { root } => {
                let block = deposits[root]
                    .block
                    .take()
                    .ok_or(CompletionError::MissingRootBlock)?;
                for m in (0..g).filter(|&m| m != root) {
                    transfer(root, m, block.numel(), &mut stats);
                }
                Ok((0..g).map(|_| Some(block.clone())).collect())
            }
            Op::Reduce { root } => {
                let numel: Vec<usize> = deposits.iter().map(|d| d.block.as_ref().map_or(0, Matrix::numel)).collect();
                let total = sum(&mut deposits)?;
                for m in (0..g).filter(|&m| m != root) {
                    transfer(m, root, numel[m], &mut stats);
                }
                Ok((0..g).map(|m| (m == root).then(|| total.clone())).collect())
            }
            Op::AllReduce => {
                let numel: Vec<usize> = deposits.iter().map(|d| d.block.as_ref().map_or(0, Matrix::numel)).collect();
                let total = sum(&mut deposits)?;
                for (m, &n) in numel.iter().enumerate().skip(1) {
                    transfer(m, 0, n, &mut stats);
                }
                for m in 1..g {
                    transfer(0, m, total.numel(), &mut stats);
                }
                Ok((0..g).map(|_| Some(total.clone())).collect())
            }
            Op::Shift { displacement } => {
                let blocks: Vec<Matrix> = deposits
                    .iter_mut()
                    .map(|d| d.block.take().expect("shift contribution"))
                    .collect();
                let mut out = Vec::with_capacity(g);
                for m in 0..g {
                    let src = (m + displacement) % g;
                    if src != m {
                        transfer(src, m, blocks[src].numel(), &mut stats);
                    }
                    out.push(Some(blocks[src].clone()));
                }
                Ok(out)
            }
            Op::Permute => {
                let mut out: Vec<Option<Matrix>> = (0..g).map(|_| None).collect();
                for (m, d) in deposits.iter_mut().enumerate() {
                    let dest = d.dest;
                    if dest >= g || out[dest].is_some() {
                        return Err(CompletionError::NotPermutation);
                    }
                    let block = d.block.take().expect("permute contribution");
                    if dest != m {
                        transfer(m, dest, block.numel(), &mut stats);
                    }
                    out[dest] = Some(block);
                }
                Ok(out)
            }
        }
    })();

    match results {
        Ok(blocks) => blocks
            .into_iter()
            .enumerate()
            .map(|(m, block)| Delivery {
                result: Ok(block),
                sent_elements: sent[m],
                recv_elements: recv[m],
            })
            .collect(),
        Err(e) => (0..g)
            .map(|_| Delivery {
                result: Err(e.clone()),
                sent_elements: 0,
                recv_elements: 0,
            })
            .collect(),
    }
}

/// Outputs of a completed SPMD run.
#[derive(Debug)]
pub struct SpmdRun<O> {
    pub outputs: BTreeMap<RankCoord, O>,
    pub stats: CommStats,
    /// Per-rank collective records, ordered by rank then step. Empty unless
    /// tracing was enabled.
    pub trace: Vec<TraceRecord>,
}

/// Runs one program per virtual rank of a grid with metered collectives.
#[derive(Clone, Debug)]
pub struct CollectiveEngine {
    grid: GridSpec,
    trace: bool,
}

impl CollectiveEngine {
    pub fn new(grid: GridSpec) -> Self {
        CollectiveEngine { grid, trace: false }
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Executes `program` on every rank with that rank's input.
    ///
    /// A failing rank aborts the run; the reported error is the one from the
    /// lowest failing rank, wrapped with its coordinate and step.
    pub fn run<I, O, F>(&self, mut inputs: BTreeMap<RankCoord, I>, program: F) -> Result<SpmdRun<O>>
    where
        I: Send,
        O: Send,
        F: Fn(&mut RankCtx<'_>, I) -> Result<O> + Sync,
    {
        let p = self.grid.p();
        let mut ordered = Vec::with_capacity(p);
        for c in self.grid.coords() {
            ordered.push(inputs.remove(&c).ok_or(Error::MissingBlock(c))?);
        }
        if let Some(extra) = inputs.keys().next() {
            return Err(Error::CoordOutOfRange {
                coord: *extra,
                grid: self.grid.to_string(),
            });
        }

        let shared = Shared {
            grid: self.grid,
            state: Mutex::new(State {
                slots: HashMap::new(),
                ranks: vec![RankState::Running; p],
                stats: CommStats::new(p),
                abort: None,
            }),
            wake: Condvar::new(),
        };

        let run_rank = |rank: usize, input: I| -> (Result<O>, usize, Option<Vec<TraceRecord>>) {
            let coord = self.grid.coord_of(rank).expect("rank in grid");
            let mut ctx = RankCtx {
                coord,
                rank,
                grid: self.grid,
                shared: &shared,
                step: 0,
                seq: [0; 3],
                trace: self.trace.then(Vec::new),
            };
            let mut guard = FinishGuard {
                shared: &shared,
                rank,
                failed: false,
            };
            let result = program(&mut ctx, input);
            guard.failed = result.is_err();
            drop(guard);
            (result, ctx.step, ctx.trace)
        };

        let results: Vec<(Result<O>, usize, Option<Vec<TraceRecord>>)> = if p == 1 {
            vec![run_rank(0, ordered.pop().expect("one input"))]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = ordered
                    .into_iter()
                    .enumerate()
                    .map(|(rank, input)| {
                        let run_rank = &run_rank;
                        scope.spawn(move || run_rank(rank, input))
                    })
                    .collect();
                handles
                    .into_iter()
                    .enumerate()
                    .map(|(rank, h)| {
                        h.join().unwrap_or_else(|panic| {
                            let msg = panic
                                .downcast_ref::<&str>()
                                .map(|s| s.to_string())
                                .or_else(|| panic.downcast_ref::<String>().cloned())
                                .unwrap_or_else(|| "panic".into());
                            (
                                Err(Error::InvalidArgument(format!("rank {rank} panicked: {msg}"))),
                                0,
                                None,
                            )
                        })
                    })
                    .collect()
            })
        };

        let state = shared.state.into_inner().unwrap_or_else(|p| p.into_inner());
        if let Some(Abort::Deadlock(blocked)) = state.abort {
            return Err(Error::Deadlock { blocked });
        }

        let mut outputs = BTreeMap::new();
        let mut trace = Vec::new();
        let mut first_error = None;
        let mut aborted = None;
        for (rank, (result, step, rank_trace)) in results.into_iter().enumerate() {
            let coord = self.grid.coord_of(rank).expect("rank in grid");
            match result {
                Ok(out) => {
                    outputs.insert(coord, out);
                }
                Err(Error::Aborted) => {
                    aborted.get_or_insert((coord, step));
                }
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(match e {
                            e @ Error::RankFailed { .. } => e,
                            e @ Error::CollectiveMismatch { .. } => e,
                            other => Error::RankFailed {
                                coord,
                                step,
                                source: Box::new(other),
                            },
                        });
                    }
                }
            }
            trace.extend(rank_trace.unwrap_or_default());
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        if aborted.is_some() {
            return Err(Error::Aborted);
        }
        Ok(SpmdRun {
            outputs,
            stats: state.stats,
            trace,
        })
    }
}

/// Runs `program` on every rank of `grid`; see [`CollectiveEngine::run`].
pub fn run_spmd<I, O, F>(grid: &GridSpec, inputs: BTreeMap<RankCoord, I>, program: F) -> Result<SpmdRun<O>>
where
    I: Send,
    O: Send,
    F: Fn(&mut RankCtx<'_>, I) -> Result<O> + Sync,
{
    CollectiveEngine::new(*grid).run(inputs, program)
}

/// Builds a per-rank input map from a function of the coordinate.
pub fn inputs_from<I>(grid: &GridSpec, mut f: impl FnMut(RankCoord) -> I) -> BTreeMap<RankCoord, I> {
    grid.coords().map(|c| (c, f(c))).collect()
}

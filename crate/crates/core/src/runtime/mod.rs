//! Deterministic SPMD execution with metered collectives.
//!
//! Each virtual rank runs the same program on its own thread. Collectives
//! are rendezvous points keyed by `(group kind, group index, per-kind call
//! number)`: a member arriving with a different operation or root fails the
//! run instead of hanging, and a state where every live rank is blocked is
//! reported as a deadlock naming the waiting ranks.
//!
//! Results never depend on thread scheduling: reductions sum contributions
//! in ascending member order, and the meter only counts, so totals are
//! order-independent.

mod engine;
mod stats;
mod trace;

pub use engine::{inputs_from, run_spmd, CollectiveEngine, RankCtx, SpmdRun};
pub use stats::{CollectiveKind, CommStats, KindStats, RankStats};
pub use trace::{export_trace, TraceRecord};

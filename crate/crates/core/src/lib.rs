//! Simulator for tensor-parallel matrix multiplication on a `[q, q, d]`
//! virtual processor grid.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`] describes the processor arrangement and its communicator groups.
//! * [`tensor`] holds the dense [`Matrix`] type, the serial oracle and the
//!   block partitioning schemes.
//! * [`runtime`] executes one program per virtual rank and meters every
//!   collective.
//! * [`algorithms`] implements Cannon, SUMMA, Tesseract and the 1-D baseline
//!   as SPMD programs.
//! * [`layers`] builds transformer components (feedforward, attention,
//!   layernorm, bias-add) on top of the Tesseract kernels.
//! * [`costmodel`] evaluates the analytic communication and memory formulas.

pub mod algorithms;
pub mod costmodel;
mod error;
pub mod grid;
pub mod layers;
pub mod rng;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::{CommGroup, GridSpec, GroupKind, RankCoord};
pub use runtime::{CommStats, RankCtx};
pub use tensor::{Matrix, ShardScheme, ShardedMatrix};

//! Dense matrices, the serial oracle and block partitioning.
//!
//! Activations of shape `[b, s, h]` are carried as `[b·s, h]` matrices, so
//! sample-major row blocks keep whole sequences together.

pub mod io;
mod matrix;
mod shard;

pub use matrix::{matmul_serial, Matrix};
pub use shard::{ShardScheme, ShardedMatrix};
